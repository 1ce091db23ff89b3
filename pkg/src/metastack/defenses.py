"""Robust aggregation rules, the post-training defense, and the RL defense pipeline.

Every aggregator takes an ``(n, P)`` array (or a list of ``P``-vectors) of
client updates and returns one ``P``-vector.  The server applies
``w_next = w - aggregate(updates)``.

The defender's action is a 4-vector ``(trim_frac, norm_bound, noise_std,
post_clip)`` configuring the pipeline::

    norm_clip(norm_bound) -> + N(0, noise_std^2) -> trimmed_mean(trim_frac) -> clamp(post_clip)
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import expit

__all__ = [
    "DEFENSE_IDS",
    "aggregate_mean",
    "aggregate_trimmed_mean",
    "aggregate_median",
    "krum",
    "krum_scores",
    "norm_clip",
    "fltrust",
    "post_process",
    "DefenseAction",
    "DefenseBox",
    "Pipeline",
    "build_pipeline",
    "FixedDefense",
    "batched_pipeline_aggregate",
]

DEFENSE_IDS = ("mean", "tmean", "median", "krum", "fltrust")


def _stack(updates) -> np.ndarray:
    U = np.asarray(updates, dtype=np.float64)
    if U.ndim == 1:
        U = U[None]
    if U.ndim != 2 or U.shape[0] == 0:
        raise ValueError("expected a non-empty (n, P) collection of updates")
    return U


def aggregate_mean(updates) -> np.ndarray:
    return _stack(updates).mean(axis=0)


def aggregate_trimmed_mean(updates, beta: float) -> np.ndarray:
    """Per coordinate, drop the ``floor(beta*n)`` largest and smallest values."""
    U = _stack(updates)
    if not 0.0 <= beta < 0.5:
        raise ValueError(f"trim fraction must lie in [0, 0.5), got {beta}")
    n = U.shape[0]
    k = int(math.floor(beta * n))
    if n - 2 * k < 1:
        raise ValueError(f"trimming {k} per side leaves no updates out of {n}")
    return np.sort(U, axis=0)[k:n - k].mean(axis=0)


def aggregate_median(updates) -> np.ndarray:
    return np.median(_stack(updates), axis=0)


def krum_scores(updates, f: int) -> np.ndarray:
    U = _stack(updates)
    n = U.shape[0]
    sq = np.sum((U[:, None, :] - U[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(sq, np.inf)
    nearest = np.sort(sq, axis=1)[:, : n - f - 2]
    return nearest.sum(axis=1)


def krum(updates, f: int) -> np.ndarray:
    """Return the update with the smallest sum of squared distances to its
    ``n - f - 2`` nearest neighbours.  Ties go to the lowest index."""
    U = _stack(updates)
    n = U.shape[0]
    if n < 2 * f + 3:
        raise ValueError(f"krum requires n ≥ 2f+3 (n={n}, f={f})")
    return U[int(np.argmin(krum_scores(U, f)))].copy()


def norm_clip(updates, alpha: float) -> np.ndarray:
    """Scale each update by ``min(1, alpha / ||u||)``."""
    if not alpha > 0:
        raise ValueError(f"norm bound must be positive, got {alpha}")
    U = _stack(updates)
    norms = np.linalg.norm(U, axis=1)
    with np.errstate(divide="ignore"):
        scale = np.where(norms > alpha, alpha / np.where(norms > 0, norms, 1.0), 1.0)
    out = U * scale[:, None]
    # rounding can leave a clipped row a few ulps above alpha; step the scale
    # down so a second clip is an exact no-op
    over = np.linalg.norm(out, axis=1) > alpha
    while np.any(over):
        scale[over] = np.nextafter(scale[over], 0.0)
        out[over] = U[over] * scale[over, None]
        over = np.linalg.norm(out, axis=1) > alpha
    return out


def fltrust(updates, server_update) -> np.ndarray:
    """Trust-weighted average with ReLU-cosine trust scores.

    Each client update is rescaled to the server update's norm.  If every
    trust score is zero the server update itself is returned.
    """
    U = _stack(updates)
    s = np.asarray(server_update, dtype=np.float64)
    s_norm = np.linalg.norm(s)
    if s_norm == 0:
        raise ValueError("FLTrust needs a non-zero server update")
    norms = np.linalg.norm(U, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cos = (U @ s) / (safe * s_norm)
    trust = np.where(norms > 0, np.maximum(cos, 0.0), 0.0)
    if trust.sum() == 0:
        return s.copy()
    rescaled = U * (s_norm / safe)[:, None]
    return (trust[:, None] * rescaled).sum(axis=0) / trust.sum()


def post_process(model, eps_clip: float):
    """Clamp every model parameter to ``[-eps_clip, eps_clip]``.

    Accepts a :class:`~metastack.data.GlobalModel` or a raw parameter array.
    """
    if not eps_clip > 0:
        raise ValueError(f"post-training clip must be positive, got {eps_clip}")
    from .data import GlobalModel

    if isinstance(model, GlobalModel):
        return GlobalModel(np.clip(model.params, -eps_clip, eps_clip), model.d, model.C)
    return np.clip(np.asarray(model, dtype=np.float64), -eps_clip, eps_clip)


@dataclasses.dataclass(frozen=True)
class DefenseAction:
    trim_frac: float
    norm_bound: float
    noise_std: float
    post_clip: float

    def __post_init__(self):
        if not 0.0 <= self.trim_frac < 0.5:
            raise ValueError(f"trim_frac must lie in [0, 0.5), got {self.trim_frac}")
        if not self.norm_bound > 0:
            raise ValueError(f"norm_bound must be positive, got {self.norm_bound}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std}")
        if not self.post_clip > 0:
            raise ValueError(f"post_clip must be positive, got {self.post_clip}")

    def as_array(self) -> np.ndarray:
        return np.array([self.trim_frac, self.norm_bound, self.noise_std, self.post_clip])

    @classmethod
    def from_array(cls, a) -> "DefenseAction":
        return cls(*(float(x) for x in a))


@dataclasses.dataclass(frozen=True)
class DefenseBox:
    """Bounds the policy output is squashed into (affine sigmoid per coordinate)."""

    trim_frac: tuple = (0.0, 0.45)
    norm_bound: tuple = (0.01, 5.0)
    noise_std: tuple = (0.0, 0.05)
    post_clip: tuple = (0.5, 20.0)

    def bounds(self) -> np.ndarray:
        return np.array([self.trim_frac, self.norm_bound, self.noise_std, self.post_clip], dtype=float)

    def squash(self, raw) -> np.ndarray:
        b = self.bounds()
        return b[:, 0] + (b[:, 1] - b[:, 0]) * expit(np.asarray(raw, dtype=float))


class Pipeline:
    """A configured defense: aggregate updates, then post-process the model."""

    def __init__(self, action: DefenseAction):
        self.action = action

    def aggregate(self, updates, rng=None) -> np.ndarray:
        a = self.action
        U = norm_clip(updates, a.norm_bound) if math.isfinite(a.norm_bound) else _stack(updates)
        if a.noise_std > 0:
            if rng is None:
                raise ValueError("a noisy pipeline needs an rng")
            U = U + a.noise_std * rng.standard_normal(U.shape)
        return aggregate_trimmed_mean(U, a.trim_frac)

    def post(self, model):
        return post_process(model, self.action.post_clip)

    def __call__(self, params, updates, rng=None):
        """Next post-processed global parameters."""
        return self.post(np.asarray(params, dtype=float) - self.aggregate(updates, rng))


def build_pipeline(a_D) -> Pipeline:
    if not isinstance(a_D, DefenseAction):
        a_D = DefenseAction.from_array(a_D)
    return Pipeline(a_D)


@dataclasses.dataclass(frozen=True)
class FixedDefense:
    """A non-learned baseline aggregator selected by id."""

    rule: str = "mean"
    trim_frac: float = 0.2
    krum_f: int = 1
    norm_bound: float = math.inf
    post_clip: float = math.inf

    def __post_init__(self):
        if self.rule not in DEFENSE_IDS:
            raise ValueError(f"unknown defense id {self.rule!r}; expected one of {DEFENSE_IDS}")

    def aggregate(self, updates, server_update=None) -> np.ndarray:
        U = norm_clip(updates, self.norm_bound) if math.isfinite(self.norm_bound) else _stack(updates)
        if self.rule == "mean":
            return aggregate_mean(U)
        if self.rule == "tmean":
            return aggregate_trimmed_mean(U, self.trim_frac)
        if self.rule == "median":
            return aggregate_median(U)
        if self.rule == "krum":
            return krum(U, self.krum_f)
        return fltrust(U, server_update)


def batched_pipeline_aggregate(U: np.ndarray, actions: np.ndarray, rng) -> np.ndarray:
    """Vectorised :meth:`Pipeline.aggregate` over a leading batch axis.

    ``U`` is ``(B, n, P)``, ``actions`` is ``(B, 4)``.  Noise is drawn in one
    ``(B, n, P)`` block, so results match the per-instance pipeline only for
    noise-free actions or ``B == 1``.
    """
    B, n, P = U.shape
    beta, alpha, delta = actions[:, 0], actions[:, 1], actions[:, 2]
    norms = np.linalg.norm(U, axis=2)
    scale = np.where(norms > alpha[:, None], alpha[:, None] / np.where(norms > 0, norms, 1.0), 1.0)
    U = U * scale[:, :, None]
    if np.any(delta > 0):
        U = U + delta[:, None, None] * rng.standard_normal(U.shape)
    k = np.floor(beta * n).astype(int)
    srt = np.sort(U, axis=1)
    pos = np.arange(n)[None, :]
    keep = (pos >= k[:, None]) & (pos < n - k[:, None])
    return np.einsum("bnp,bn->bp", srt, keep.astype(float)) / (n - 2 * k)[:, None]
