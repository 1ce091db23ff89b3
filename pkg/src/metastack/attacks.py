"""Malicious update generators.

Rule-book attacks (stable ids ``"ipm"``, ``"lmp"``, ``"eb"``,
``"bfl_static"``), backdoor data poisoning, and the map from the adaptive
attacker's 3-dim action to an update vector.  All functions are pure given
their explicit ``rng``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .data import Dataset
from .defenses import (aggregate_mean, aggregate_median, aggregate_trimmed_mean,
                       krum, krum_scores)

__all__ = [
    "AttackAction",
    "AttackBox",
    "LMPSearch",
    "ipm_update",
    "lmp_update",
    "lmp_search",
    "lmp_accepts",
    "eb_update",
    "backdoor_poison",
    "apply_attack_action",
    "batched_attack_action",
    "load_trigger",
    "save_trigger",
]

LMP_AGGREGATORS = ("krum", "trimmed_mean", "median", "mean")


@dataclasses.dataclass(frozen=True)
class AttackAction:
    boost: float
    direction_mix: float
    noise_scale: float
    boost_cap: float = 10.0

    def __post_init__(self):
        vals = (self.boost, self.direction_mix, self.noise_scale)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("attack action entries must be finite")
        if not 0.0 <= self.boost <= self.boost_cap:
            raise ValueError(f"boost must lie in [0, {self.boost_cap}], got {self.boost}")
        if not -1.0 <= self.direction_mix <= 1.0:
            raise ValueError(f"direction_mix must lie in [-1, 1], got {self.direction_mix}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be non-negative, got {self.noise_scale}")

    def as_array(self) -> np.ndarray:
        return np.array([self.boost, self.direction_mix, self.noise_scale])


@dataclasses.dataclass(frozen=True)
class AttackBox:
    boost_cap: float = 10.0
    noise_cap: float = 0.1

    def squash(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        return np.stack([
            self.boost_cap * expit(raw[..., 0]),
            np.tanh(raw[..., 1]),
            self.noise_cap * expit(raw[..., 2]),
        ], axis=-1)


def ipm_update(benign_updates, eps: float) -> np.ndarray:
    """Inner-product manipulation: ``-eps * mean(benign)``."""
    U = np.asarray(benign_updates, dtype=float)
    if U.ndim != 2 or len(U) == 0:
        raise ValueError("IPM needs at least one benign update")
    return -eps * U.mean(axis=0)


def eb_update(local_malicious_grad, boost: float) -> np.ndarray:
    """Explicit boosting of the attacker's own malicious gradient."""
    if boost < 0:
        raise ValueError(f"boost must be non-negative, got {boost}")
    return boost * np.asarray(local_malicious_grad, dtype=float)


@dataclasses.dataclass(frozen=True)
class LMPSearch:
    lambda0: float = 10.0
    max_halvings: int = 20
    n_copies: int = 1
    krum_f: int = 1
    trim_frac: float = 0.2


def _aggregate(aggregator, U, cfg: LMPSearch):
    if aggregator == "krum":
        return krum(U, cfg.krum_f)
    if aggregator == "trimmed_mean":
        return aggregate_trimmed_mean(U, cfg.trim_frac)
    if aggregator == "median":
        return aggregate_median(U)
    return aggregate_mean(U)


def lmp_accepts(benign, crafted, aggregator: str, cfg: LMPSearch) -> bool:
    """Acceptance predicate of the line search.

    Krum: the crafted vector is the one selected.  Other rules: the attacked
    aggregate moves against the sign of the benign mean.
    """
    B = np.asarray(benign, dtype=float)
    U = np.concatenate([B, np.repeat(crafted[None], cfg.n_copies, axis=0)])
    if aggregator == "krum":
        scores = krum_scores(U, cfg.krum_f)
        return int(np.argmin(scores)) >= len(B)
    s = np.sign(B.mean(axis=0))
    shift = _aggregate(aggregator, U, cfg) - _aggregate(aggregator, B, cfg)
    return float(shift @ s) < 0.0


def lmp_search(benign_updates, aggregator: str, cfg: LMPSearch = LMPSearch()):
    """Directed-deviation update with a halving line search on its magnitude.

    Returns ``(update, lambda_star, accepted)``.
    """
    if aggregator not in LMP_AGGREGATORS:
        raise ValueError(f"LMP does not support aggregator {aggregator!r}; expected one of {LMP_AGGREGATORS}")
    B = np.asarray(benign_updates, dtype=float)
    if B.ndim != 2 or len(B) == 0:
        raise ValueError("LMP needs at least one benign update")
    m = B.mean(axis=0)
    base = -np.sign(m) * np.linalg.norm(m) / math.sqrt(m.size)
    lam = cfg.lambda0
    if not np.any(base):
        return np.zeros_like(m), lam, False
    if aggregator == "krum" and len(B) + cfg.n_copies < 2 * cfg.krum_f + 3:
        raise ValueError(f"krum requires n ≥ 2f+3 (n={len(B) + cfg.n_copies}, f={cfg.krum_f})")
    for _ in range(cfg.max_halvings + 1):
        crafted = lam * base
        if lmp_accepts(B, crafted, aggregator, cfg):
            return crafted, lam, True
        lam *= 0.5
    return lam * 2 * base, lam * 2, False


def lmp_update(benign_updates, aggregator: str, search_cfg: LMPSearch = LMPSearch()) -> np.ndarray:
    return lmp_search(benign_updates, aggregator, search_cfg)[0]


def backdoor_poison(data: Dataset, trigger, target: int, fraction: float, rng: np.random.Generator,
                    clip_range: Optional[tuple] = None) -> Dataset:
    """Add ``trigger`` to ``ceil(fraction * n)`` random samples and relabel them ``target``.

    Triggered features are clamped to ``clip_range``; by default the data
    range widened to at least ``[-3 sigma, 3 sigma]`` of the feature values.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"poison fraction must lie in (0, 1], got {fraction}")
    trigger = np.asarray(trigger, dtype=float)
    if trigger.shape != (data.d,):
        raise ValueError(f"trigger has shape {trigger.shape}, data dimension is {data.d}")
    if not 0 <= target < data.n_classes:
        raise ValueError(f"target label {target} outside 0..{data.n_classes - 1}")
    if clip_range is None:
        sigma = float(data.X.std())
        clip_range = (min(float(data.X.min()), -3 * sigma), max(float(data.X.max()), 3 * sigma))
    n = len(data)
    k = min(n, math.ceil(fraction * n - 1e-12))
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    X = data.X.copy()
    y = data.y.copy()
    X[mask] = np.clip(X[mask] + trigger, clip_range[0], clip_range[1])
    y[mask] = target
    return Dataset(X, y, data.n_classes, target_label=int(target), poisoned_mask=mask)


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), 0.0), n[..., 0]


def batched_attack_action(actions, benign_mean, own_grad, rng) -> np.ndarray:
    """Vectorised :func:`apply_attack_action` over a leading batch axis."""
    actions = np.asarray(actions, dtype=float)
    boost, mix, noise = actions[..., 0], actions[..., 1], actions[..., 2]
    u_b, n_b = _unit(np.asarray(benign_mean, dtype=float))
    u_o, n_o = _unit(np.asarray(own_grad, dtype=float))
    blended = mix[..., None] * u_b + (1.0 - np.abs(mix))[..., None] * u_o
    has_mean = n_b > 0
    direction = np.where(has_mean[..., None], blended * n_b[..., None], u_o * n_o[..., None])
    out = boost[..., None] * direction
    return out + noise[..., None] * rng.standard_normal(out.shape)


def apply_attack_action(action: AttackAction, benign_mean, own_grad, rng) -> np.ndarray:
    """``boost * [mix * unit(mean) + (1 - |mix|) * unit(own)] * ||mean|| + noise``.

    A zero benign mean falls back to ``boost * own_grad``; if both vanish only
    the noise term remains.
    """
    benign_mean = np.asarray(benign_mean, dtype=float)
    own_grad = np.asarray(own_grad, dtype=float)
    if benign_mean.shape != own_grad.shape:
        raise ValueError("benign mean and own gradient must have the same shape")
    return batched_attack_action(action.as_array(), benign_mean, own_grad, rng)


def load_trigger(path) -> np.ndarray:
    with open(path) as fh:
        doc = json.load(fh)
    vec = doc["trigger"] if isinstance(doc, dict) else doc
    arr = np.asarray(vec, dtype=float)
    if arr.ndim != 1:
        raise ValueError("trigger file must hold a flat vector")
    return arr


def save_trigger(trigger, path) -> None:
    Path(path).write_text(json.dumps([float(v) for v in trigger]) + "\n")
