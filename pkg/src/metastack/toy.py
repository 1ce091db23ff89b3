"""Small games with exact answers.

``ToyMDP`` is the canonical 2-state, 2-action, horizon-2 tabular MDP whose 16
trajectories can be enumerated, giving exact values, gradients, Hessians and
adapted objectives to test the Monte-Carlo estimators against.  ``Bandit1D``
and ``PoisonToy`` are one-step continuous games for statistical smoke tests.

Every game exposes ``sample(theta, phi, n, rng) -> TrajectoryBatch`` so it
plugs into the estimators and training loops like the FL environment does.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import policy as pol
from .game import TrajectoryBatch

__all__ = ["ToyMDP", "Bandit1D", "PoisonToy"]


def _softmax_rows(table):
    z = table - table.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ToyMDP:
    """Two states, two actions, horizon two, stochastic start and transitions.

    Rewards are ``R[s, a] + offset`` and must stay non-positive.
    """

    n_states = 2
    n_actions = 2
    horizon = 2

    def __init__(self, gamma: float = 0.9, offset: float = 0.0):
        self.gamma = gamma
        self.p0 = np.array([0.6, 0.4])
        self.P = np.array([[[0.8, 0.2], [0.3, 0.7]],
                           [[0.5, 0.5], [0.1, 0.9]]])
        self.R = np.array([[-1.0, -0.2], [-0.5, -1.5]]) + offset
        if np.any(self.R > 0):
            raise ValueError("toy rewards must stay non-positive")
        self.arch = pol.TabularSoftmaxArch(self.n_states, self.n_actions)

    def policy(self, flat, player: str = "defender") -> pol.PolicyParams:
        return pol.PolicyParams(np.asarray(flat, dtype=float), self.arch, player)

    # ------------------------------------------------------------------ sampling
    def sample(self, theta: pol.PolicyParams, phi, n: int, rng: np.random.Generator) -> TrajectoryBatch:
        H = self.horizon
        s = (rng.random(n) >= self.p0[0]).astype(np.intp)
        obs = np.zeros((n, H, 1))
        act = np.zeros((n, H, 1))
        logp = np.zeros((n, H))
        r = np.zeros((n, H))
        for t in range(H):
            obs[:, t, 0] = s
            a, lp = pol.act(theta, obs[:, t], rng)
            act[:, t] = a
            logp[:, t] = lp
            ai = a[:, 0].astype(np.intp)
            r[:, t] = self.R[s, ai]
            s = (rng.random(n) >= self.P[s, ai, 0]).astype(np.intp)
        return TrajectoryBatch(obs_D=obs, act_D=act, logp_D=logp, r_D=r, r_A=np.zeros_like(r),
                               n_malicious=np.zeros((n, H), dtype=np.int64), gamma=self.gamma,
                               theta_digest=theta.digest())

    # ------------------------------------------------------------------ exact oracles
    def trajectories(self):
        """All ``(s1, a1, s2, a2)`` tuples."""
        return list(itertools.product(range(2), repeat=4))

    def _traj_terms(self, flat):
        """Per-trajectory probability, discounted return and summed score."""
        pi = _softmax_rows(np.asarray(flat, dtype=float).reshape(2, 2))
        g1, g2 = self.gamma, self.gamma ** 2
        out = []
        for s1, a1, s2, a2 in self.trajectories():
            q = self.p0[s1] * pi[s1, a1] * self.P[s1, a1, s2] * pi[s2, a2]
            R = g1 * self.R[s1, a1] + g2 * self.R[s2, a2]
            score = np.zeros((2, 2))
            score[s1] -= pi[s1]
            score[s1, a1] += 1.0
            score[s2] -= pi[s2]
            score[s2, a2] += 1.0
            out.append((q, R, score.ravel()))
        return out

    def exact_J(self, flat) -> float:
        return float(sum(q * R for q, R, _ in self._traj_terms(flat)))

    def exact_grad(self, flat) -> np.ndarray:
        return sum(q * R * s for q, R, s in self._traj_terms(flat))

    def exact_hessian_fd(self, flat, h: float = 1e-4) -> np.ndarray:
        """Central differences of :meth:`exact_grad`."""
        flat = np.asarray(flat, dtype=float)
        P = flat.size
        Hm = np.empty((P, P))
        for j in range(P):
            e = np.zeros(P)
            e[j] = h
            Hm[:, j] = (self.exact_grad(flat + e) - self.exact_grad(flat - e)) / (2 * h)
        return Hm

    def adapted_objective(self, flat, eta: float) -> float:
        """``E_tau J(theta + eta * g(tau))`` for a one-trajectory adaptation batch."""
        flat = np.asarray(flat, dtype=float)
        return float(sum(q * self.exact_J(flat + eta * R * s) for q, R, s in self._traj_terms(flat)))

    def adapted_gradient_fd(self, flat, eta: float, h: float = 1e-5) -> np.ndarray:
        flat = np.asarray(flat, dtype=float)
        out = np.empty(flat.size)
        for j in range(flat.size):
            e = np.zeros(flat.size)
            e[j] = h
            out[j] = (self.adapted_objective(flat + e, eta) - self.adapted_objective(flat - e, eta)) / (2 * h)
        return out

    def reptile_direction_exact(self, flat, eta: float) -> np.ndarray:
        """``E_tau grad J(theta + eta * g(tau))``, the mean of the reptile estimator."""
        flat = np.asarray(flat, dtype=float)
        return sum(q * self.exact_grad(flat + eta * R * s) for q, R, s in self._traj_terms(flat))


class Bandit1D:
    """One-step continuous bandit with reward ``-(a - target)^2``."""

    horizon = 1

    def __init__(self, target: float = 2.0, hidden: int = 4):
        self.target = target
        self.arch = pol.GaussianMLPArch(1, 1, hidden)

    def init(self, rng, log_std_init: float = 0.0) -> pol.PolicyParams:
        return pol.init_policy(self.arch, rng, log_std_init=log_std_init)

    def sample(self, theta, phi, n, rng) -> TrajectoryBatch:
        obs = np.zeros((n, 1, 1))
        a, lp = pol.act(theta, obs, rng)
        r = -(a[..., 0] - self.target) ** 2
        return TrajectoryBatch(obs_D=obs, act_D=a, logp_D=lp, r_D=r, r_A=np.zeros_like(r),
                               n_malicious=np.zeros(r.shape, dtype=np.int64), gamma=0.99,
                               theta_digest=theta.digest())


class PoisonToy:
    """A one-round scalar federated game against a frozen mean aggregator.

    ``n_benign`` clients push the scalar model from 0 toward 1; one attacker
    submits its raw action ``a`` as the update.  The defender's reward is
    ``-(w - 1)^2``; the attacker earns that loss minus a detectability cost
    ``cost * a^2``, which gives it an interior optimum.
    """

    horizon = 1

    def __init__(self, n_benign: int = 4, lr: float = 0.5, noise: float = 0.1, cost: float = 0.1):
        self.n_benign = n_benign
        self.lr = lr
        self.noise = noise
        self.cost = cost
        self.arch = pol.GaussianMLPArch(1, 1, 4)

    def optimum(self) -> float:
        """Attacker's optimal mean action (ignoring variance)."""
        k = 1.0 / (self.n_benign + 1)
        wb = self.n_benign * self.lr * k
        # maximise (wb - k a - 1)^2 - cost a^2
        return k * (1.0 - wb) / (self.cost - k * k)

    def sample(self, theta, phi, n, rng) -> TrajectoryBatch:
        obs = np.zeros((n, 1, 1))
        a, lp = pol.act(phi, obs, rng)
        benign = self.lr + self.noise * rng.standard_normal((n, self.n_benign))
        w = (benign.sum(axis=1) - a[:, 0, 0]) / (self.n_benign + 1)
        F = (w - 1.0) ** 2
        r_D = -F[:, None]
        r_A = F[:, None] - self.cost * a[..., 0] ** 2
        return TrajectoryBatch(obs_D=np.zeros((n, 1, 1)), act_D=np.zeros((n, 1, 1)), logp_D=np.zeros((n, 1)),
                               r_D=r_D, r_A=r_A, n_malicious=np.ones((n, 1), dtype=np.int64), gamma=0.99,
                               obs_A=obs, act_A=a, logp_A=lp[..., None] if lp.ndim == 1 else lp,
                               phi_digest=phi.digest())
