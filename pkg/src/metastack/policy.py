"""Stochastic policies with analytic score functions and Hessian-vector products.

Two parameterisations share one interface:

* :class:`GaussianMLPArch` -- one tanh hidden layer producing the mean of a
  diagonal Gaussian, with a learned per-dimension ``log_std``.  Used by both
  players in the FL game and by the bandit toys.
* :class:`TabularSoftmaxArch` -- a softmax table over a discrete state/action
  space.  It exists so estimators can be checked against exact enumeration.

Parameters are always a flat float64 vector wrapped in :class:`PolicyParams`.
All derivative routines take batched ``obs``/``act`` arrays of shape
``(..., obs_dim)`` / ``(..., act_dim)``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .game import params_digest

__all__ = [
    "GaussianMLPArch",
    "TabularSoftmaxArch",
    "PolicyParams",
    "act",
    "log_prob",
    "score",
    "hvp",
    "hessian",
    "init_policy",
    "arch_from_dict",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclasses.dataclass(frozen=True)
class GaussianMLPArch:
    obs_dim: int
    act_dim: int
    hidden: int = 32
    log_std_floor: float = -5.0

    kind = "gaussian_mlp"

    @property
    def n_params(self) -> int:
        o, h, a = self.obs_dim, self.hidden, self.act_dim
        return (o + 1) * h + (h + 1) * a + a

    def unpack(self, flat):
        o, h, a = self.obs_dim, self.hidden, self.act_dim
        i = 0
        W1 = flat[i:i + h * o].reshape(h, o); i += h * o
        b1 = flat[i:i + h]; i += h
        W2 = flat[i:i + a * h].reshape(a, h); i += a * h
        b2 = flat[i:i + a]; i += a
        log_std = flat[i:i + a]
        return W1, b1, W2, b2, log_std

    def init(self, rng: np.random.Generator, log_std_init: float = -0.5,
             out_scale: float = 0.01) -> np.ndarray:
        o, h, a = self.obs_dim, self.hidden, self.act_dim
        W1 = rng.standard_normal((h, o)) / math.sqrt(max(o, 1))
        W2 = out_scale * rng.standard_normal((a, h)) / math.sqrt(h)
        return np.concatenate([W1.ravel(), np.zeros(h), W2.ravel(), np.zeros(a),
                               np.full(a, float(log_std_init))])

    def _forward(self, flat, obs):
        W1, b1, W2, b2, log_std = self.unpack(flat)
        hid = np.tanh(obs @ W1.T + b1)
        mu = hid @ W2.T + b2
        s = np.maximum(log_std, self.log_std_floor)
        live = (log_std > self.log_std_floor).astype(float)
        return hid, mu, s, live

    def mean(self, flat, obs):
        return self._forward(flat, obs)[1]

    def sample(self, flat, obs, rng):
        _, mu, s, _ = self._forward(flat, obs)
        eps = rng.standard_normal(mu.shape)
        action = mu + np.exp(s) * eps
        logp = -(0.5 * eps**2 + s + _HALF_LOG_2PI).sum(axis=-1)
        return action, logp

    def log_prob(self, flat, obs, act):
        _, mu, s, _ = self._forward(flat, obs)
        diff = act - mu
        return -(0.5 * diff**2 * np.exp(-2 * s) + s + _HALF_LOG_2PI).sum(axis=-1)

    def score(self, flat, obs, act):
        W1, b1, W2, b2, log_std = self.unpack(flat)
        hid, mu, s, live = self._forward(flat, obs)
        inv_var = np.exp(-2 * s)
        diff = act - mu
        z = diff * inv_var
        g_s = (diff**2 * inv_var - 1.0) * live
        dh = z @ W2
        du = dh * (1.0 - hid**2)
        M = obs.shape[0]
        return np.concatenate([
            (du[:, :, None] * obs[:, None, :]).reshape(M, -1),
            du,
            (z[:, :, None] * hid[:, None, :]).reshape(M, -1),
            z,
            g_s,
        ], axis=1)

    def hvp(self, flat, obs, act, V, weights):
        """``sum_m weights[m] * Hess(log pi_m) @ V`` via the R-operator."""
        W1, b1, W2, b2, log_std = self.unpack(flat)
        o, h, a = self.obs_dim, self.hidden, self.act_dim
        hid, mu, s, live = self._forward(flat, obs)
        inv_var = np.exp(-2 * s)
        diff = act - mu
        z = diff * inv_var
        dh = z @ W2
        one_m_h2 = 1.0 - hid**2

        K = V.shape[1]
        i = 0
        V1 = V[i:i + h * o].reshape(h, o, K); i += h * o
        c1 = V[i:i + h]; i += h
        V2 = V[i:i + a * h].reshape(a, h, K); i += a * h
        c2 = V[i:i + a]; i += a
        vs = V[i:i + a] * live[:, None]

        Ru = np.einsum("hok,mo->mhk", V1, obs) + c1[None]
        Rh = one_m_h2[:, :, None] * Ru
        Rmu = np.einsum("ahk,mh->mak", V2, hid) + np.einsum("ah,mhk->mak", W2, Rh) + c2[None]
        Rdiff = -Rmu
        Rz = Rdiff * inv_var[None, :, None] - 2.0 * vs[None] * z[:, :, None]
        Rgs = (2.0 * (diff * inv_var)[:, :, None] * Rdiff
               - 2.0 * vs[None] * (diff**2 * inv_var)[:, :, None]) * live[None, :, None]
        Rdh = np.einsum("ahk,ma->mhk", V2, z) + np.einsum("ah,mak->mhk", W2, Rz)
        Rdu = Rdh * one_m_h2[:, :, None] - 2.0 * (dh * hid)[:, :, None] * Rh

        w = weights
        return np.concatenate([
            np.einsum("m,mhk,mo->hok", w, Rdu, obs).reshape(h * o, K),
            np.einsum("m,mhk->hk", w, Rdu),
            (np.einsum("m,mak,mh->ahk", w, Rz, hid)
             + np.einsum("m,ma,mhk->ahk", w, z, Rh)).reshape(a * h, K),
            np.einsum("m,mak->ak", w, Rz),
            np.einsum("m,mak->ak", w, Rgs),
        ], axis=0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "hidden": self.hidden, "log_std_floor": self.log_std_floor}


@dataclasses.dataclass(frozen=True)
class TabularSoftmaxArch:
    """``pi(a|s) = softmax(theta[s])[a]``; obs and actions are stored as indices."""

    n_states: int
    n_actions: int

    kind = "tabular_softmax"
    obs_dim = 1
    act_dim = 1

    @property
    def n_params(self) -> int:
        return self.n_states * self.n_actions

    def init(self, rng: np.random.Generator, scale: float = 0.0) -> np.ndarray:
        return scale * rng.standard_normal(self.n_params)

    def probs(self, flat, states):
        table = flat.reshape(self.n_states, self.n_actions)
        logits = table[states]
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=-1, keepdims=True)

    @staticmethod
    def _idx(x):
        return np.asarray(x)[..., 0].astype(np.intp)

    def sample(self, flat, obs, rng):
        states = self._idx(obs)
        p = self.probs(flat, states)
        u = rng.random(states.shape)
        a = (np.cumsum(p, axis=-1) <= u[:, None]).sum(axis=-1)
        a = np.minimum(a, self.n_actions - 1)
        logp = np.log(p[np.arange(len(a)), a])
        return a[:, None].astype(float), logp

    def log_prob(self, flat, obs, act):
        states, a = self._idx(obs), self._idx(act)
        p = self.probs(flat, states)
        return np.log(p[np.arange(len(a)), a])

    def score(self, flat, obs, act):
        states, a = self._idx(obs), self._idx(act)
        M = len(states)
        p = self.probs(flat, states)
        out = np.zeros((M, self.n_states, self.n_actions))
        rows = np.arange(M)
        out[rows, states] = -p
        out[rows, states, a] += 1.0
        return out.reshape(M, -1)

    def hvp(self, flat, obs, act, V, weights):
        states = self._idx(obs)
        p = self.probs(flat, states)
        K = V.shape[1]
        Vt = V.reshape(self.n_states, self.n_actions, K)
        vs = Vt[states]
        pv = np.einsum("ma,mak->mk", p, vs)
        hv = -(p[:, :, None] * vs - p[:, :, None] * pv[:, None, :])
        out = np.zeros((self.n_states, self.n_actions, K))
        np.add.at(out, states, weights[:, None, None] * hv)
        return out.reshape(-1, K)

    def hessians(self, flat, obs):
        """Per-sample Hessians of ``log pi`` (independent of the action)."""
        states = self._idx(obs)
        p = self.probs(flat, states)
        M = len(states)
        A = self.n_actions
        out = np.zeros((M, self.n_states, A, self.n_states, A))
        block = -(p[:, :, None] * np.eye(A)[None] - p[:, :, None] * p[:, None, :])
        rows = np.arange(M)
        out[rows, states, :, states, :] = block
        return out.reshape(M, self.n_params, self.n_params)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_states": self.n_states, "n_actions": self.n_actions}


def arch_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == GaussianMLPArch.kind:
        return GaussianMLPArch(**d)
    if kind == TabularSoftmaxArch.kind:
        return TabularSoftmaxArch(**d)
    raise ValueError(f"unknown policy architecture {kind!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class PolicyParams:
    """Flat parameter vector plus the architecture that interprets it."""

    flat: np.ndarray
    arch: object
    player: str = "defender"

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != self.arch.n_params:
            raise ValueError(
                f"{self.arch.kind} expects {self.arch.n_params} parameters, got shape {flat.shape}"
            )
        if not np.all(np.isfinite(flat)):
            raise ValueError(f"{self.player} policy parameters contain NaN or inf")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    @property
    def dim(self) -> int:
        return self.flat.size

    def with_flat(self, flat) -> "PolicyParams":
        return PolicyParams(flat, self.arch, self.player)

    def digest(self) -> str:
        return params_digest(self.flat)

    def __eq__(self, other):
        return (isinstance(other, PolicyParams) and self.arch == other.arch
                and self.player == other.player and np.array_equal(self.flat, other.flat))

    def to_json(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "player": self.player,
                "arch": self.arch.to_dict(), "flat": [float(x) for x in self.flat]}

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyParams":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        return cls(np.array(doc["flat"], dtype=np.float64), arch_from_dict(doc["arch"]), doc["player"])


def init_policy(arch, rng: np.random.Generator, player: str = "defender", **kw) -> PolicyParams:
    return PolicyParams(arch.init(rng, **kw), arch, player)


def save_checkpoint(params: PolicyParams, path, extra: Optional[dict] = None) -> None:
    doc = params.to_json()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path) -> PolicyParams:
    with open(path) as fh:
        return PolicyParams.from_json(json.load(fh))


def _batched(params: PolicyParams, obs, act=None):
    obs = np.asarray(obs, dtype=float)
    lead = obs.shape[:-1]
    obs2 = obs.reshape(-1, obs.shape[-1])
    if obs2.shape[1] != params.arch.obs_dim:
        raise ValueError(f"observation has dimension {obs2.shape[1]}, policy expects {params.arch.obs_dim}")
    if act is None:
        return lead, obs2, None
    act = np.asarray(act, dtype=float)
    return lead, obs2, act.reshape(-1, act.shape[-1])


def act(params: PolicyParams, obs, rng: np.random.Generator):
    """Sample ``(pre-squash action, log-density)`` for every observation."""
    lead, obs2, _ = _batched(params, obs)
    a, logp = params.arch.sample(params.flat, obs2, rng)
    return a.reshape(lead + (a.shape[-1],)), logp.reshape(lead)


def log_prob(params: PolicyParams, obs, action):
    lead, obs2, act2 = _batched(params, obs, action)
    return params.arch.log_prob(params.flat, obs2, act2).reshape(lead)


def score(params: PolicyParams, obs, action):
    """Gradient of ``log pi(action | obs)`` with respect to the flat parameters."""
    lead, obs2, act2 = _batched(params, obs, action)
    return params.arch.score(params.flat, obs2, act2).reshape(lead + (params.dim,))


def hvp(params: PolicyParams, obs, action, V, weights=None):
    """Weighted sum of per-sample ``Hess(log pi) @ V`` over all samples.

    ``V`` is ``(P,)`` or ``(P, K)``; ``weights`` broadcasts against the sample
    axes of ``obs`` (default: all ones).
    """
    lead, obs2, act2 = _batched(params, obs, action)
    w = np.ones(lead) if weights is None else np.broadcast_to(weights, lead)
    V = np.asarray(V, dtype=float)
    squeeze = V.ndim == 1
    V2 = V[:, None] if squeeze else V
    out = params.arch.hvp(params.flat, obs2, act2, V2, np.asarray(w, dtype=float).reshape(-1))
    return out[:, 0] if squeeze else out


def hessian(params: PolicyParams, obs, action, weights=None, chunk: int = 256):
    """Dense weighted Hessian sum, built from identity-block HVPs."""
    P = params.dim
    out = np.empty((P, P))
    for start in range(0, P, chunk):
        stop = min(P, start + chunk)
        E = np.zeros((P, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        out[:, start:stop] = hvp(params, obs, action, E, weights)
    return out
