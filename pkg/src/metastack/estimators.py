"""Monte-Carlo gradient estimators over :class:`~metastack.game.TrajectoryBatch`.

Notation: ``s_i = sum_t grad log pi(a_t | o_t)`` is the trajectory score,
``R_i`` the discounted return and ``g(tau_i) = s_i * R_i``.

* :func:`pg_estimate` -- ``(1/N) sum_i s_i (R_i - b)``.
* :func:`hessian_estimate` -- ``(1/N) sum_i [g_i s_i^T + R_i sum_t Hess log pi]``.
* :func:`adapt` -- one-step adaptation ``theta + eta * pg_estimate``.
* :func:`adapted_gradient` -- gradient of the adapted value
  ``E_tau J(Psi(theta, tau))``, either ``"reptile"`` (the gradient at the
  adapted point only) or ``"full"`` (the chain rule through ``Psi`` plus the
  score term for the adaptation batch).

On the full form.  Differentiating ``E_tau J(theta + eta * g_hat(tau))``
gives ``E[(I + eta * grad g_hat(tau))^T grad J(theta') + J(theta') sum_i s_i]``.
Here ``grad g_hat`` holds only the ``R_i * Hess log pi`` part; the
``g_i s_i^T`` part of :func:`hessian_estimate` is the score term and is
accounted for by ``J(theta') sum_i s_i``.  ``correction="hessian"`` instead
plugs the full :func:`hessian_estimate` into the chain term, which counts the
score term twice; it is kept for comparison only.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

from . import policy as pol
from .game import TrajectoryBatch

__all__ = [
    "GradEstimate",
    "HessianEstimate",
    "HESSIAN_DIM_CAP",
    "trajectory_scores",
    "pg_estimate",
    "hessian_estimate",
    "adapt",
    "adapt_steps",
    "adapted_gradient",
    "meta_gradient",
    "check_on_policy",
]

HESSIAN_DIM_CAP = 2048
BASELINES = ("none", "mean_return")
MODES = ("reptile", "full")

# sampler(theta, phi, n, rng) -> TrajectoryBatch
Sampler = Callable[[pol.PolicyParams, Optional[pol.PolicyParams], int, np.random.Generator], TrajectoryBatch]


@dataclasses.dataclass(frozen=True, eq=False)
class GradEstimate:
    """A gradient estimate with per-coordinate sample variance."""

    vector: np.ndarray
    batch_size: int
    variance: np.ndarray

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not np.all(np.isfinite(self.vector)):
            raise FloatingPointError("non-finite gradient estimate")

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.variance / self.batch_size)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclasses.dataclass(frozen=True, eq=False)
class HessianEstimate:
    matrix: np.ndarray
    batch_size: int
    se: Optional[np.ndarray] = None


def _who(who):
    if who in ("defender", "D"):
        return "defender"
    if who in ("attacker", "A"):
        return "attacker"
    raise ValueError(f"who must be 'defender' or 'attacker', got {who!r}")


def check_on_policy(batch: TrajectoryBatch, params: pol.PolicyParams, who: str = "defender") -> None:
    """Raise if ``batch`` was not collected under ``params`` (digest mismatch)."""
    recorded = batch.theta_digest if _who(who) == "defender" else batch.phi_digest
    if recorded and recorded != params.digest():
        raise ValueError(f"off-policy batch: {who} parameters differ from the ones that generated it "
                         f"({recorded} != {params.digest()})")


def trajectory_scores(batch: TrajectoryBatch, params: pol.PolicyParams, who: str = "defender") -> np.ndarray:
    """``(N, P)`` array of per-trajectory summed scores."""
    obs, act = batch.player_arrays(_who(who))
    return pol.score(params, obs, act).sum(axis=1)


def _centered(R, baseline):
    if baseline not in BASELINES:
        raise ValueError(f"baseline must be one of {BASELINES}, got {baseline!r}")
    if baseline == "mean_return":
        return R - R.mean()
    return R


def _loo_mean(R):
    n = len(R)
    if n < 2:
        return np.zeros_like(R)
    return (R.sum() - R) / (n - 1)


def pg_estimate(batch: TrajectoryBatch, params: pol.PolicyParams, who: str = "defender",
                baseline: str = "none", objective: Optional[str] = None) -> GradEstimate:
    """Score-function gradient of ``objective``'s value w.r.t. ``who``'s policy.

    Args:
        batch: on-policy trajectories.
        params: the parameters of player ``who`` that generated ``batch``.
        who: whose policy parameters to differentiate.
        baseline: ``"none"`` (the literal estimator) or ``"mean_return"``.
        objective: whose return to use; defaults to ``who``.
    """
    if batch.n == 0:
        raise ValueError("cannot estimate a gradient from an empty batch")
    who = _who(who)
    check_on_policy(batch, params, who)
    R = _centered(batch.returns(objective or who), baseline)
    terms = trajectory_scores(batch, params, who) * R[:, None]
    var = terms.var(axis=0, ddof=1) if batch.n > 1 else np.zeros(params.dim)
    return GradEstimate(terms.mean(axis=0), batch.n, var)


def hessian_estimate(batch: TrajectoryBatch, params: pol.PolicyParams, who: str = "defender",
                     with_se: bool = False) -> HessianEstimate:
    """``(1/N) sum_i [g(tau_i) s_i^T + grad g(tau_i)]`` with ``grad g = R_i * Hess(sum_t log pi)``."""
    who = _who(who)
    if params.dim > HESSIAN_DIM_CAP:
        raise ValueError(f"policy has {params.dim} parameters, above the dense Hessian cap of "
                         f"{HESSIAN_DIM_CAP}; use Hessian-vector products (policy.hvp) instead")
    if batch.n == 0:
        raise ValueError("cannot estimate a Hessian from an empty batch")
    check_on_policy(batch, params, who)
    N = batch.n
    R = batch.returns(who)
    S = trajectory_scores(batch, params, who)
    obs, act = batch.player_arrays(who)
    outer = np.einsum("n,np,nq->pq", R, S, S) / N
    curv = pol.hessian(params, obs, act, weights=np.broadcast_to(R[:, None], obs.shape[:2]) / N)
    se = None
    if with_se:
        samples = _per_trajectory_hessians(params, obs, act, R, S)
        se = samples.std(axis=0, ddof=1) / np.sqrt(N)
    return HessianEstimate(outer + curv, N, se)


def _per_trajectory_hessians(params, obs, act, R, S):
    arch = params.arch
    N, H = obs.shape[:2]
    if hasattr(arch, "hessians"):
        per_step = arch.hessians(params.flat, obs.reshape(N * H, -1)).reshape(N, H, params.dim, params.dim)
        curv = per_step.sum(axis=1)
    else:
        curv = np.stack([pol.hessian(params, obs[i], act[i]) for i in range(N)])
    return R[:, None, None] * (S[:, :, None] * S[:, None, :] + curv)


def adapt(theta: pol.PolicyParams, batch: TrajectoryBatch, eta: float, baseline: str = "none") -> pol.PolicyParams:
    """One adaptation step ``theta + eta * pg_estimate(batch, theta)``."""
    if eta < 0:
        raise ValueError(f"adaptation step eta must be non-negative, got {eta}")
    check_on_policy(batch, theta, "defender")
    if eta == 0:
        return theta
    return theta.with_flat(theta.flat + eta * pg_estimate(batch, theta, "defender", baseline).vector)


def adapt_steps(theta, phi, sampler: Sampler, eta: float, steps: int, n_b: int, rngs,
                baseline: str = "none") -> pol.PolicyParams:
    """``steps`` adaptation steps, re-sampling under the current parameters each time.

    ``rngs`` is a sequence (or a callable ``k -> Generator``) of per-step streams.
    """
    for k in range(steps):
        rng = rngs(k) if callable(rngs) else rngs[k]
        theta = adapt(theta, sampler(theta, phi, n_b, rng), eta, baseline)
    return theta


def adapted_gradient(theta: pol.PolicyParams, phi: Optional[pol.PolicyParams], sampler: Sampler,
                     eta: float, n_b: int, rng_adapt: np.random.Generator, rng_eval: np.random.Generator,
                     mode: str = "full", wrt: str = "defender", baseline: str = "none",
                     n_eval: Optional[int] = None, correction: str = "exact",
                     adapt_batch: Optional[TrajectoryBatch] = None,
                     objective: Optional[str] = None) -> GradEstimate:
    """Gradient of ``E_tau J_obj(Psi(theta, tau), phi)`` w.r.t. ``wrt``'s parameters.

    By default each player's own objective is differentiated; ``objective``
    overrides that (e.g. the defender's value as a function of ``phi``).  Round one samples ``n_b`` trajectories
    under ``(theta, phi)`` and adapts the defender; round two samples
    ``n_eval`` (default ``n_b``) trajectories at the adapted point.  With
    ``eta == 0`` round one is skipped and both modes return the plain policy
    gradient from round two.

    ``adapt_batch`` supplies a pre-collected round-one batch (``rng_adapt``
    is then unused).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if correction not in ("exact", "hessian"):
        raise ValueError("correction must be 'exact' or 'hessian'")
    wrt = _who(wrt)
    objective = wrt if objective is None else _who(objective)
    if wrt == "attacker" and phi is None:
        raise ValueError("attacker gradient needs an attacker policy")
    n_eval = n_b if n_eval is None else n_eval
    if eta < 0:
        raise ValueError(f"adaptation step eta must be non-negative, got {eta}")

    batch1 = None
    theta_ad = theta
    if eta > 0:
        batch1 = adapt_batch if adapt_batch is not None else sampler(theta, phi, n_b, rng_adapt)
        theta_ad = adapt(theta, batch1, eta, baseline)
    batch2 = sampler(theta_ad, phi, n_eval, rng_eval)
    params2 = theta_ad if wrt == "defender" else phi
    est = pg_estimate(batch2, params2, wrt, baseline, objective)
    if mode == "reptile" or batch1 is None:
        return est
    if wrt == "defender" and params2.dim > HESSIAN_DIM_CAP and correction == "hessian":
        raise ValueError(f"full mode with a {params2.dim}-dim policy exceeds the Hessian cap {HESSIAN_DIM_CAP}")

    v = est.vector
    params1 = theta if wrt == "defender" else phi
    S1 = trajectory_scores(batch1, params1, wrt)
    J2 = batch2.returns(objective).mean()
    R1 = batch1.returns(objective)
    b = _loo_mean(R1) if baseline == "mean_return" else np.zeros_like(R1)
    score_term = ((J2 - b)[:, None] * S1).sum(axis=0)
    chain = np.zeros_like(v)
    if wrt == "defender" and objective == "defender":
        # Jacobian of Psi: eta * (1/N) sum_i (R_i - b) Hess(sum_t log pi_i)
        RD = _centered(batch1.returns("defender"), baseline)
        obs, act = batch1.player_arrays("defender")
        w = np.broadcast_to(RD[:, None], obs.shape[:2]) / batch1.n
        chain = eta * pol.hvp(theta, obs, act, v, w)
        if correction == "hessian":
            SD = trajectory_scores(batch1, theta, "defender")
            chain = chain + eta * np.einsum("n,np,nq,q->p", RD, SD, SD, v) / batch1.n
    total = v + chain + score_term
    return GradEstimate(total, est.batch_size, est.variance)


def meta_gradient(theta: pol.PolicyParams, phi: Optional[pol.PolicyParams], sampler: Sampler, eta: float,
                  mode: str, n_b: int, rng_adapt: np.random.Generator, rng_eval: np.random.Generator,
                  baseline: str = "none", n_eval: Optional[int] = None,
                  correction: str = "exact") -> GradEstimate:
    """Defender meta-gradient for one attacker type (``sampler`` fixes the type)."""
    return adapted_gradient(theta, phi, sampler, eta, n_b, rng_adapt, rng_eval, mode, "defender",
                            baseline, n_eval, correction)
