"""Numerical checks of equilibrium conditions and regularity assumptions.

The probes talk to an *objectives* object rather than to an environment
directly.  Two implementations are provided:

* :class:`SampledObjectives` estimates adapted values and gradients by
  Monte-Carlo rollouts of a game;
* :class:`QuadraticStandIn` injects closed-form quadratic objectives so the
  probes have exact answers.

An objectives object offers ``grad_D(theta, phi, xi, key)``,
``grad_A(theta, phi, xi, key, objective)`` and ``value(theta, phi, xi, key,
objective)``, each returning ``(estimate, standard_error)``, plus
``best_response(theta, phi, xi, key)``.  ``key`` names the random streams,
so two calls with the same key share common random numbers.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from typing import Optional

import numpy as np

from . import policy as pol
from .estimators import adapt, adapted_gradient
from .game import AttackTypeSpec, TypePrior
from .rng import Streams

__all__ = [
    "DiagnosticRecord",
    "SCFit",
    "SCWarning",
    "FOSEReport",
    "PLReport",
    "GradCheckReport",
    "SampledObjectives",
    "QuadraticStandIn",
    "fose_residual",
    "box_residual",
    "sc_check",
    "pl_probe",
    "lipschitz_probe",
    "grad_check_suite",
    "LIPSCHITZ_IDS",
]

LIPSCHITZ_IDS = ("L11", "L12", "L21", "L22", "L_V")


@dataclasses.dataclass
class DiagnosticRecord:
    iteration: int
    defender_residual: float
    attacker_residuals: dict = dataclasses.field(default_factory=dict)
    sc_fit: Optional["SCFit"] = None
    pl_ratio: Optional[float] = None
    grad_check_rel_err: Optional[float] = None
    wallclock_s: Optional[float] = None
    extra: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not self.defender_residual >= 0:
            raise ValueError(f"defender residual must be non-negative, got {self.defender_residual}")
        for k, v in self.attacker_residuals.items():
            if not v >= 0:
                raise ValueError(f"attacker residual for type {k} must be non-negative, got {v}")

    @property
    def attacker_residual_max(self) -> Optional[float]:
        return max(self.attacker_residuals.values()) if self.attacker_residuals else None


# ---------------------------------------------------------------------- objectives


def _flat(x):
    return x.flat if isinstance(x, pol.PolicyParams) else np.asarray(x, dtype=float)


def _norm_se(vec, se):
    """Delta-method standard error of ``||vec||``."""
    n = np.linalg.norm(vec)
    if n == 0:
        return float(np.linalg.norm(se))
    return float(np.sqrt(np.sum((vec / n) ** 2 * se ** 2)))


class QuadraticStandIn:
    """Closed-form stand-in game on raw parameter vectors.

    ``L_D = -s_D ||theta - a_xi||^2 - c <theta, phi>`` and
    ``L_A = -s_A ||phi - b_xi||^2 + c <theta, phi>``; ``a`` and ``b`` map a
    type id to its centre (a single vector applies to every type).
    """

    def __init__(self, a, b, s_D: float = 1.0, s_A: float = 1.0, coupling: float = 0.0):
        self.a = a
        self.b = b
        self.s_D = s_D
        self.s_A = s_A
        self.c = coupling

    def _centre(self, table, xi):
        if isinstance(table, dict):
            return np.asarray(table[getattr(xi, "id", xi)], dtype=float)
        return np.asarray(table, dtype=float)

    def value(self, theta, phi, xi, key=(), objective="attacker"):
        th, ph = _flat(theta), _flat(phi)
        if objective in ("attacker", "A"):
            v = -self.s_A * np.sum((ph - self._centre(self.b, xi)) ** 2) + self.c * th @ ph
        else:
            v = -self.s_D * np.sum((th - self._centre(self.a, xi)) ** 2) - self.c * th @ ph
        return float(v), 0.0

    def grad_D(self, theta, phi, xi, key=()):
        th, ph = _flat(theta), _flat(phi)
        g = -2 * self.s_D * (th - self._centre(self.a, xi)) - self.c * ph
        return g, np.zeros_like(g)

    def grad_A(self, theta, phi, xi, key=(), objective="attacker"):
        th, ph = _flat(theta), _flat(phi)
        if objective in ("attacker", "A"):
            g = -2 * self.s_A * (ph - self._centre(self.b, xi)) + self.c * th
        else:
            g = -self.c * th
        return g, np.zeros_like(g)

    def best_response(self, theta, phi, xi, key=()):
        return self._centre(self.b, xi) + self.c * _flat(theta) / (2 * self.s_A)

    def grad_V(self, theta, xi, phi0=None, key=()):
        """Gradient of ``V(theta) = L_D(theta, phi*(theta))``."""
        th = _flat(theta)
        return -2 * self.s_D * (th - self._centre(self.a, xi)) - self.c * self._centre(self.b, xi) \
            - self.c ** 2 * th / self.s_A


class SampledObjectives:
    """Monte-Carlo adapted values and gradients of a game.

    Each estimate averages ``replicates`` independent two-round estimates
    (adaptation batch of ``n_b`` then ``n_eval`` evaluation trajectories) and
    reports the standard error of that average.
    """

    def __init__(self, env, eta: float, n_b: int = 32, n_eval: Optional[int] = None, replicates: int = 8,
                 mode: str = "full", baseline: str = "mean_return", seed: int = 0,
                 br_steps: int = 20, kappa_A: float = 0.01):
        from .meta import make_sampler

        self.env = env
        self._make_sampler = make_sampler
        self.eta = eta
        self.n_b = n_b
        self.n_eval = n_b if n_eval is None else n_eval
        self.replicates = replicates
        self.mode = mode
        self.baseline = baseline
        self.streams = Streams(seed).child("diagnostics")
        self.br_steps = br_steps
        self.kappa_A = kappa_A
        self._samplers = {}

    def sampler(self, xi):
        k = getattr(xi, "id", None)
        if k not in self._samplers:
            self._samplers[k] = self._make_sampler(self.env, xi)
        return self._samplers[k]

    def _reps(self, fn):
        vals = np.array([fn(r) for r in range(self.replicates)])
        se = vals.std(axis=0, ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else np.zeros_like(vals[0])
        return vals.mean(axis=0), se

    def grad_D(self, theta, phi, xi, key=()):
        s = self.sampler(xi)
        return self._reps(lambda r: adapted_gradient(
            theta, phi, s, self.eta, self.n_b, self.streams.get(*key, "D", r, "adapt"),
            self.streams.get(*key, "D", r, "eval"), self.mode, "defender", self.baseline, self.n_eval).vector)

    def grad_A(self, theta, phi, xi, key=(), objective="attacker"):
        s = self.sampler(xi)
        return self._reps(lambda r: adapted_gradient(
            theta, phi, s, self.eta, self.n_b, self.streams.get(*key, "A", r, "adapt"),
            self.streams.get(*key, "A", r, "eval"), self.mode, "attacker", self.baseline, self.n_eval,
            objective=objective).vector)

    def value(self, theta, phi, xi, key=(), objective="attacker"):
        s = self.sampler(xi)

        def one(r):
            th = theta
            if self.eta > 0:
                th = adapt(theta, s(theta, phi, self.n_b, self.streams.get(*key, "V", r, "adapt")),
                           self.eta, self.baseline)
            return s(th, phi, self.n_eval, self.streams.get(*key, "V", r, "eval")).returns(objective).mean()

        v, se = self._reps(one)
        return float(v), float(se)

    def best_response(self, theta, phi, xi, key=()):
        from .meta import best_response

        phi_star, _ = best_response(theta, phi, self.sampler(xi), self.br_steps, self.kappa_A, self.n_b,
                                    lambda k: self.streams.get(*key, "BR", k), self.baseline)
        return phi_star

    def grad_V(self, theta, xi, phi0=None, key=()):
        phi = self.best_response(theta, phi0, xi, key) if phi0 is not None else None
        return self.grad_D(theta, phi, xi, key)[0]


# ---------------------------------------------------------------------- FOSE residual


@dataclasses.dataclass
class FOSEReport:
    defender: float
    defender_se: float
    per_type: dict
    per_type_se: dict

    def to_json(self) -> dict:
        return {"defender": self.defender, "defender_se": self.defender_se,
                "per_type": {str(k): v for k, v in self.per_type.items()},
                "per_type_se": {str(k): v for k, v in self.per_type_se.items()}}


def fose_residual(theta, phis: dict, prior: TypePrior, objectives, key=("fose",)) -> FOSEReport:
    """Gradient-norm residuals of the meta first-order Stackelberg conditions.

    The defender residual is ``||sum_xi Q(xi) grad_theta L_D(theta, phi_xi, xi)||``;
    each adaptive type's residual is ``||grad_phi L_A(theta, phi_xi, xi)||``.
    """
    total = None
    var = None
    per, per_se = {}, {}
    for xi, p in prior.entries:
        phi = phis.get(xi.id) if xi.adaptive else None
        g, se = objectives.grad_D(theta, phi, xi, key + (xi.id,))
        total = p * g if total is None else total + p * g
        var = (p * se) ** 2 if var is None else var + (p * se) ** 2
        if phi is not None:
            ga, sea = objectives.grad_A(theta, phi, xi, key + (xi.id,))
            per[xi.id] = float(np.linalg.norm(ga))
            per_se[xi.id] = _norm_se(ga, sea)
    se = np.sqrt(var)
    return FOSEReport(float(np.linalg.norm(total)), _norm_se(total, se), per, per_se)


def box_residual(grad, x, lower, upper, radius: float = 1.0) -> float:
    """``max <grad, y - x>`` over ``y`` in the box intersected with an
    infinity-norm ball of ``radius`` around ``x`` (coordinate-wise maximiser)."""
    grad, x = np.asarray(grad, float), np.asarray(x, float)
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if np.any(x < lower - 1e-15) or np.any(x > upper + 1e-15):
        raise ValueError("point lies outside the box")
    lo = np.maximum(lower - x, -radius)
    hi = np.minimum(upper - x, radius)
    return float(np.sum(np.maximum(grad * lo, grad * hi).clip(min=0.0)))


# ---------------------------------------------------------------------- strict competitiveness


class SCWarning(UserWarning):
    """The fitted reward relation is not strictly competitive (c >= 0)."""


@dataclasses.dataclass(frozen=True)
class SCFit:
    c: float
    d: float
    max_abs_residual: float
    n_samples: int

    @property
    def strictly_competitive(self) -> bool:
        return self.c < 0

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def sc_check(env, xi: AttackTypeSpec, n_samples: int, rng: np.random.Generator, theta=None, phi=None,
             log_std_init: float = 0.5) -> SCFit:
    """Least-squares fit ``r_D = c * r_A + d`` over sampled steps.

    Steps with no sampled malicious client are excluded: the attacker reward
    is pinned to zero there by construction.  Missing policies are drawn at
    random with a wide action distribution.
    """
    if n_samples < 10:
        raise ValueError("sc_check needs at least 10 samples")
    if theta is None:
        theta = pol.init_policy(env.defender_arch(), rng, log_std_init=log_std_init)
    if xi.adaptive and phi is None:
        phi = pol.init_policy(env.attacker_arch(), rng, "attacker", log_std_init=log_std_init)
    rD, rA = [], []
    have = 0
    while have < n_samples:
        need = n_samples - have
        batch = env.rollout(theta, phi, xi, max(1, math.ceil(need / env.cfg.horizon)), rng)
        mask = batch.n_malicious > 0
        rD.append(batch.r_D[mask])
        rA.append(batch.r_A[mask])
        have += int(mask.sum())
    rD = np.concatenate(rD)[:n_samples]
    rA = np.concatenate(rA)[:n_samples]
    if np.ptp(rA) == 0:
        raise ValueError("cannot identify c: every sampled attacker reward is identical")
    A = np.stack([rA, np.ones_like(rA)], axis=1)
    (c, d), *_ = np.linalg.lstsq(A, rD, rcond=None)
    res = float(np.max(np.abs(rD - (c * rA + d))))
    fit = SCFit(float(c), float(d), res, len(rD))
    if not fit.strictly_competitive:
        warnings.warn(f"type {xi.id}: fitted c = {c:.6g} >= 0, rewards are not strictly competitive",
                      SCWarning, stacklevel=2)
    return fit


# ---------------------------------------------------------------------- PL probe


@dataclasses.dataclass
class PLReport:
    ratio: Optional[float]
    ratios: list
    skipped: int
    invalidated: int
    status: str

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def pl_probe(theta, phi_star, xi, objectives, n_probes: int, rng: np.random.Generator, radius: float = 0.5,
             objective: str = "attacker", key=("pl",)) -> PLReport:
    """Empirical lower envelope of ``||grad_phi L||^2 / (2 (L(phi*) - L(phi)))``.

    Probes are ``phi* + radius * N(0, I)``.  A probe scoring above ``phi*``
    invalidates the maximiser and is counted, not used; zero perturbations
    are skipped.
    """
    star = _flat(phi_star)
    L_star, _ = objectives.value(theta, phi_star, xi, key + ("star",), objective)
    ratios = []
    skipped = invalidated = 0
    for j in range(n_probes):
        delta = radius * rng.standard_normal(star.shape)
        if not np.any(delta):
            skipped += 1
            continue
        phi = phi_star.with_flat(star + delta) if isinstance(phi_star, pol.PolicyParams) else star + delta
        L, _ = objectives.value(theta, phi, xi, key + (j,), objective)
        gap = L_star - L
        if gap < 0:
            invalidated += 1
            continue
        if gap == 0:
            skipped += 1
            continue
        g, _ = objectives.grad_A(theta, phi, xi, key + (j,), objective)
        ratios.append(float(g @ g / (2 * gap)))
    ratio = min(ratios) if ratios else None
    ok = ratio is not None and ratio > 0 and invalidated == 0
    return PLReport(ratio, ratios, skipped, invalidated, "ok" if ok else "PL unverified")


# ---------------------------------------------------------------------- Lipschitz probe


def lipschitz_probe(fn_id: str, theta, phi, xi, objectives, n_pairs: int, rng: np.random.Generator,
                    radius: float = 0.5, key=("lip",)) -> float:
    """Max of ``||grad(x) - grad(x')|| / ||x - x'||`` over random nearby pairs.

    ``L11``: grad_theta L_D vs theta; ``L12``: grad_theta L_D vs phi;
    ``L21``: grad_phi L_A vs theta; ``L22``: grad_phi L_A vs phi;
    ``L_V``: gradient of the defender value at the attacker's best response.
    Pairs are drawn sequentially, so a larger ``n_pairs`` probes a superset.
    """
    if fn_id not in LIPSCHITZ_IDS:
        raise ValueError(f"unknown Lipschitz probe {fn_id!r}; expected one of {LIPSCHITZ_IDS}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    move_theta = fn_id in ("L11", "L21", "L_V")
    base = _flat(theta) if move_theta else _flat(phi)
    template = theta if move_theta else phi

    def point(x):
        return template.with_flat(x) if isinstance(template, pol.PolicyParams) else x

    def grad(x, k):
        th, ph = (point(x), phi) if move_theta else (theta, point(x))
        if fn_id in ("L11", "L12"):
            return objectives.grad_D(th, ph, xi, k)[0]
        if fn_id in ("L21", "L22"):
            return objectives.grad_A(th, ph, xi, k)[0]
        return objectives.grad_V(th, xi, phi, k)

    best = 0.0
    for j in range(n_pairs):
        x1 = base + radius * rng.standard_normal(base.shape)
        x2 = x1 + radius * rng.standard_normal(base.shape)
        dist = np.linalg.norm(x2 - x1)
        if dist == 0:
            continue
        k = key + (j,)  # common random numbers within a pair
        best = max(best, float(np.linalg.norm(grad(x2, k) - grad(x1, k)) / dist))
    return best


# ---------------------------------------------------------------------- gradient-check suite


@dataclasses.dataclass
class GradCheckReport:
    entries: list

    @property
    def passed(self) -> bool:
        return all(e["passed"] for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max(e["rel_err"] for e in self.entries if e.get("rel_err") is not None)

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "entries": self.entries}, indent=2)

    def table(self) -> str:
        lines = [f"{'check':<28}{'status':<8}{'max|z|':>10}{'rel_err':>12}"]
        for e in self.entries:
            z = "" if e.get("max_abs_z") is None else f"{e['max_abs_z']:.3f}"
            r = "" if e.get("rel_err") is None else f"{e['rel_err']:.2e}"
            lines.append(f"{e['name']:<28}{'PASS' if e['passed'] else 'FAIL':<8}{z:>10}{r:>12}")
        return "\n".join(lines)


def _entry(name, est, exact, se, tol_z=3.0, **extra):
    z = np.abs(est - exact) / np.where(se > 0, se, np.inf)
    rel = float(np.linalg.norm(est - exact) / max(np.linalg.norm(exact), 1e-300))
    return {"name": name, "passed": bool(np.all(z <= tol_z)), "max_abs_z": float(z.max()), "rel_err": rel, **extra}


def grad_check_suite(seed: int = 0, n_traj: int = 100_000, n_meta: int = 10_000, eta: float = 0.5,
                     theta_flat=(0.3, -0.2, 0.5, 0.1)) -> GradCheckReport:
    """Estimator-vs-enumeration checks on the canonical toy MDP.

    Covers the policy gradient, the Hessian estimator (against central
    differences of the exact gradient, plus symmetry), the full meta-gradient
    (against differences of the exact one-trajectory adapted objective) and
    the ascent property of the reptile direction.
    """
    from .toy import ToyMDP

    streams = Streams(seed).child("gradcheck")
    mdp = ToyMDP()
    theta = mdp.policy(np.asarray(theta_flat, dtype=float))
    entries = []

    from .estimators import hessian_estimate, pg_estimate

    batch = mdp.sample(theta, None, n_traj, streams.get("pg"))
    g = pg_estimate(batch, theta)
    entries.append(_entry("policy_gradient", g.vector, mdp.exact_grad(theta.flat), g.se))

    hb = mdp.sample(theta, None, n_traj, streams.get("hessian"))
    h = hessian_estimate(hb, theta, with_se=True)
    entries.append(_entry("hessian_vs_fd", h.matrix, mdp.exact_hessian_fd(theta.flat, 1e-4), h.se))
    asym_se = np.sqrt(h.se ** 2 + h.se.T ** 2)
    entries.append(_entry("hessian_symmetry", h.matrix - h.matrix.T, np.zeros_like(h.matrix), asym_se))

    rng = streams.get("meta")
    full = np.empty((n_meta, theta.dim))
    rep = np.empty((n_meta, theta.dim))
    for i in range(n_meta):
        b1 = mdp.sample(theta, None, 1, rng)
        full[i] = adapted_gradient(theta, None, mdp.sample, eta, 1, rng, rng, "full", n_eval=8,
                                   adapt_batch=b1).vector
        rep[i] = adapted_gradient(theta, None, mdp.sample, eta, 1, rng, rng, "reptile", n_eval=8,
                                  adapt_batch=b1).vector
    target = mdp.adapted_gradient_fd(theta.flat, eta)
    full_mean = full.mean(axis=0)
    entries.append(_entry("meta_gradient_full", full_mean, target, full.std(axis=0, ddof=1) / math.sqrt(n_meta)))
    rep_mean = rep.mean(axis=0)
    cos = float(rep_mean @ target / (np.linalg.norm(rep_mean) * np.linalg.norm(target)))
    entries.append({"name": "reptile_ascent_cosine", "passed": cos > 0, "max_abs_z": None, "rel_err": None,
                    "cosine": cos})
    return GradCheckReport(entries)
