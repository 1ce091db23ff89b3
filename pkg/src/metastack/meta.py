"""Training loops: Reptile meta-RL, meta-Stackelberg learning, the BSE baseline
and online adaptation.

All randomness comes from named substreams of ``Streams(cfg.seed)``:

* ``("iter", t, "types")`` -- the K types sampled at outer iteration ``t``;
* ``("iter", t, slot, "adapt")`` -- the adaptation batch of a slot;
* ``("iter", t, slot, "attacker", k)`` -- attacker inner step ``k``;
* ``("iter", t, slot, "defender", k)`` -- defender gradient batch ``k``.

The per-slot work inside one iteration therefore does not depend on the
execution order, and the slots can run on a thread pool.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from . import policy as pol
from .diagnostics import DiagnosticRecord
from .estimators import adapt, adapted_gradient, pg_estimate
from .game import AttackTypeSpec, TypePrior, sample_types
from .rng import Streams

__all__ = [
    "MetaConfig",
    "MetaState",
    "NumericalFailure",
    "make_sampler",
    "init_state",
    "reptile_meta_rl",
    "best_response",
    "meta_sl",
    "bse_baseline",
    "online_adapt",
]


class NumericalFailure(FloatingPointError):
    """A NaN/Inf surfaced during training; carries the outer iteration."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"numerical failure at iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclasses.dataclass(frozen=True)
class MetaConfig:
    K: Optional[int] = None  # None means min(4, |types|)
    l: int = 1
    N_D: int = 100
    N_A: int = 10
    N_b: int = 16
    eta: float = 0.01
    kappa: float = 0.001
    kappa_A: float = 0.001
    kappa_D: float = 0.001
    mode: str = "reptile"
    seed: int = 0
    baseline: str = "mean_return"
    n_eval: Optional[int] = None  # round-two batch size, defaults to N_b
    hidden: int = 16
    log_std_init: float = -0.5
    workers: int = 1

    def __post_init__(self):
        if self.K is not None and self.K < 1:
            raise ValueError("K must be at least 1")
        if self.l < 0 or self.N_D < 0 or self.N_A < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.N_b < 1:
            raise ValueError("N_b must be at least 1")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if min(self.kappa, self.kappa_A, self.kappa_D) < 0:
            raise ValueError("step sizes must be non-negative")
        if self.mode not in ("reptile", "full"):
            raise ValueError(f"mode must be 'reptile' or 'full', got {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def k_for(self, prior: TypePrior) -> int:
        return min(4, len(prior)) if self.K is None else self.K


@dataclasses.dataclass
class MetaState:
    theta: pol.PolicyParams
    phis: dict
    iteration: int = 0
    residual_history: list = dataclasses.field(default_factory=list)

    def check(self, prior: TypePrior):
        missing = [xi.id for xi in prior.types if xi.adaptive and xi.id not in self.phis]
        if missing:
            raise ValueError(f"no attacker policy for adaptive types {missing}")


def make_sampler(env, xi: Optional[AttackTypeSpec]):
    """``(theta, phi, n, rng) -> TrajectoryBatch`` for one type of ``env``."""
    if hasattr(env, "rollout"):
        return lambda theta, phi, n, rng: env.rollout(theta, phi, xi, n, rng)
    if hasattr(env, "sample"):
        return env.sample
    raise TypeError(f"{type(env).__name__} offers neither rollout() nor sample()")


def _arch(env, player, hidden):
    if player == "defender" and hasattr(env, "defender_arch"):
        return env.defender_arch(hidden)
    if player == "attacker" and hasattr(env, "attacker_arch"):
        return env.attacker_arch(hidden)
    return env.arch


def init_state(cfg: MetaConfig, prior: TypePrior, env, theta0=None, phis0=None) -> MetaState:
    streams = Streams(cfg.seed)
    theta = theta0 if theta0 is not None else pol.init_policy(
        _arch(env, "defender", cfg.hidden), streams.get("init", "defender"), "defender",
        log_std_init=cfg.log_std_init)
    phis = dict(phis0 or {})
    for xi in prior.types:
        if xi.adaptive and xi.id not in phis:
            phis[xi.id] = pol.init_policy(_arch(env, "attacker", cfg.hidden), streams.get("init", "attacker", xi.id),
                                          "attacker", log_std_init=cfg.log_std_init)
    return MetaState(theta, phis)


def _map_slots(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def _batch_metrics(batch) -> dict:
    out = {"rD_mean": float(batch.r_D.mean()), "rA_mean": float(batch.r_A.mean())}
    for key in ("clean_loss", "clean_acc", "backdoor_acc"):
        if key in batch.info:
            vals = np.asarray(batch.info[key], dtype=float)
            out[key] = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else float("nan")
    return out


def _merge_metrics(items):
    keys = sorted({k for m in items for k in m})
    out = {}
    for k in keys:
        vals = np.array([m[k] for m in items if k in m], dtype=float)
        out[k] = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else float("nan")
    return out


def _outer_update(theta: pol.PolicyParams, targets) -> pol.PolicyParams:
    """``theta + (1/K) sum_k (target_k - theta)``, summed in slot order."""
    delta = np.zeros_like(theta.flat)
    for tgt in targets:
        delta = delta + (tgt - theta.flat)
    return theta.with_flat(theta.flat + delta / len(targets))


def reptile_meta_rl(cfg: MetaConfig, prior: TypePrior, env, state: Optional[MetaState] = None,
                    callback: Optional[Callable] = None) -> MetaState:
    """Reptile meta-RL with ``l``-step adaptation over rule-based attack types.

    Each outer iteration samples K types, runs ``l`` policy-gradient steps of
    size ``kappa`` from the current meta-policy against each, and moves the
    meta-policy to the average of the adapted parameters.
    """
    adaptive = [xi.id for xi in prior.types if xi.adaptive]
    if adaptive:
        raise ValueError(f"reptile meta-RL handles fixed attacks only; types {adaptive} are adaptive "
                         "-- use meta_sl instead")
    state = state or init_state(cfg, prior, env)
    streams = Streams(cfg.seed)
    K = cfg.k_for(prior)
    samplers = {xi.id: make_sampler(env, xi) for xi in prior.types}

    def run_slot(t, slot, xi):
        th = state.theta
        metrics = {}
        for k in range(cfg.l):
            batch = samplers[xi.id](th, None, cfg.N_b, streams.get("iter", t, slot, "defender", k))
            g = pg_estimate(batch, th, "defender", cfg.baseline)
            th = th.with_flat(th.flat + cfg.kappa * g.vector)
            metrics = _batch_metrics(batch)
        return th.flat, metrics

    for t in range(state.iteration, cfg.N_D):
        try:
            types = sample_types(prior, K, streams.get("iter", t, "types"))
            results = _map_slots(run_slot, [(t, s, xi) for s, xi in enumerate(types)], cfg.workers)
            old = state.theta
            state.theta = _outer_update(old, [r[0] for r in results])
        except FloatingPointError as exc:
            raise NumericalFailure(t, exc) from exc
        rec = DiagnosticRecord(iteration=t, defender_residual=float(np.linalg.norm(state.theta.flat - old.flat)),
                               attacker_residuals={}, extra=_merge_metrics([r[1] for r in results]))
        state.residual_history.append(rec)
        state.iteration = t + 1
        if callback is not None:
            callback(state, rec)
    return state


def best_response(theta_adapted: pol.PolicyParams, phi0: pol.PolicyParams, sampler, n_steps: int,
                  kappa_A: float, n_b: int, rngs, baseline: str = "mean_return"):
    """``n_steps`` policy-gradient ascent steps on the attacker's value.

    Returns ``(phi_last, history)`` where ``history`` lists, per step, the
    attacker's mean return, the gradient norm and the batch metrics.
    """
    phi = phi0
    history = []
    for k in range(n_steps):
        rng = rngs(k) if callable(rngs) else rngs[k]
        batch = sampler(theta_adapted, phi, n_b, rng)
        g = pg_estimate(batch, phi, "attacker", baseline)
        history.append({"return_A": float(batch.returns("attacker").mean()), "grad_norm": g.norm,
                        **_batch_metrics(batch)})
        phi = phi.with_flat(phi.flat + kappa_A * g.vector)
    return phi, history


def meta_sl(cfg: MetaConfig, prior: TypePrior, env, state: Optional[MetaState] = None,
            callback: Optional[Callable] = None) -> MetaState:
    """Meta-Stackelberg learning with one-step adaptation.

    Per sampled type: adapt the meta-policy with step ``eta``; let an
    adaptive attacker best-respond for ``N_A`` steps against the adapted
    defense; estimate the defender gradient (``mode``) and form
    ``theta_bar = theta + kappa_D * grad``.  The meta-policy moves to the
    average of the ``theta_bar``; each sampled attacker keeps its last inner
    iterate.
    """
    state = state or init_state(cfg, prior, env)
    state.check(prior)
    streams = Streams(cfg.seed)
    K = cfg.k_for(prior)
    samplers = {xi.id: make_sampler(env, xi) for xi in prior.types}

    def run_slot(t, slot, xi):
        theta = state.theta
        sampler = samplers[xi.id]
        phi = state.phis.get(xi.id) if xi.adaptive else None
        theta_ad = theta
        if cfg.eta > 0:
            batch = sampler(theta, phi, cfg.N_b, streams.get("iter", t, slot, "adapt"))
            theta_ad = adapt(theta, batch, cfg.eta, cfg.baseline)
        a_norm = None
        if xi.adaptive and cfg.N_A > 0:
            phi, hist = best_response(theta_ad, phi, sampler, cfg.N_A, cfg.kappa_A, cfg.N_b,
                                      lambda k: streams.get("iter", t, slot, "attacker", k), cfg.baseline)
            a_norm = hist[-1]["grad_norm"]
        rng_eval = streams.get("iter", t, slot, "defender", 0)
        if cfg.mode == "reptile":
            batch2 = sampler(theta_ad, phi, cfg.n_eval or cfg.N_b, rng_eval)
            g = pg_estimate(batch2, theta_ad, "defender", cfg.baseline)
            metrics = _batch_metrics(batch2)
        else:
            holder = {}

            def recording(th, ph, n, rng):
                b = sampler(th, ph, n, rng)
                holder["last"] = b
                return b

            g = adapted_gradient(theta, phi, recording, cfg.eta, cfg.N_b,
                                 streams.get("iter", t, slot, "defender", "adapt"), rng_eval, "full",
                                 "defender", cfg.baseline, cfg.n_eval)
            metrics = _batch_metrics(holder["last"])
        theta_bar = theta.flat + cfg.kappa_D * g.vector
        return theta_bar, phi, g.vector, a_norm, metrics

    for t in range(state.iteration, cfg.N_D):
        try:
            types = sample_types(prior, K, streams.get("iter", t, "types"))
            results = _map_slots(run_slot, [(t, s, xi) for s, xi in enumerate(types)], cfg.workers)
            state.theta = _outer_update(state.theta, [r[0] for r in results])
        except FloatingPointError as exc:
            raise NumericalFailure(t, exc) from exc
        a_res = {}
        for xi, (_, phi, _, a_norm, _) in zip(types, results):
            if xi.adaptive:
                state.phis[xi.id] = phi  # a type sampled twice keeps the later slot
                if a_norm is not None:
                    a_res[xi.id] = a_norm
        mean_grad = np.mean([r[2] for r in results], axis=0)
        rec = DiagnosticRecord(iteration=t, defender_residual=float(np.linalg.norm(mean_grad)),
                               attacker_residuals=a_res, extra=_merge_metrics([r[4] for r in results]))
        state.residual_history.append(rec)
        state.iteration = t + 1
        if callback is not None:
            callback(state, rec)
    return state


def bse_baseline(cfg: MetaConfig, prior: TypePrior, env, state: Optional[MetaState] = None,
                 callback: Optional[Callable] = None) -> MetaState:
    """The non-adaptive Bayesian Stackelberg defense: :func:`meta_sl` with ``eta = 0``."""
    return meta_sl(dataclasses.replace(cfg, eta=0.0), prior, env, state, callback)


def online_adapt(theta: pol.PolicyParams, sampler, steps: int, eta: float, n_b: int, streams: Streams,
                 phi: Optional[pol.PolicyParams] = None, baseline: str = "mean_return"):
    """Repeated one-step adaptation against a live attack.

    Returns ``(theta_adapted, metrics)`` with one metrics dict per step,
    measured on the batch that step adapted from.
    """
    metrics = []
    for k in range(steps):
        batch = sampler(theta, phi, n_b, streams.get("online", k))
        metrics.append({"step": k, "return_D": float(batch.returns("defender").mean()), **_batch_metrics(batch)})
        theta = adapt(theta, batch, eta, baseline)
    return theta, metrics
