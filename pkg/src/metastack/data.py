"""Datasets, the multinomial-logistic global model and its losses.

The global model stores ``C * (d + 1)`` parameters laid out as a ``(C, d+1)``
matrix whose last column is the bias.  Synthetic tasks are Gaussian clusters
with pairwise unit-separated class means; clients receive label-skewed shards
following the group-allocation scheme for non-i.i.d. federated data
(probability ``q`` of going to the label's own group).
"""

from __future__ import annotations

import dataclasses
import gzip
import math
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "Dataset",
    "GlobalModel",
    "SyntheticSpec",
    "SyntheticTask",
    "class_means",
    "make_synthetic_task",
    "make_synthetic_dataset",
    "partition",
    "task_from_dataset",
    "read_idx",
    "load_idx_dataset",
    "eval_loss",
    "eval_accuracy",
    "eval_backdoor_metrics",
]


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    # set on sets produced by backdoor poisoning
    target_label: Optional[int] = None
    poisoned_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or len(X) == 0:
            raise ValueError("dataset must be a non-empty (n, d) feature array")
        if y.shape != (len(X),):
            raise ValueError("labels must be a vector with one entry per sample")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def C(self) -> int:
        return self.n_classes

    def __len__(self):
        return len(self.y)

    @property
    def samples(self):
        return list(zip(self.X, self.y.tolist()))

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


@dataclasses.dataclass(frozen=True, eq=False)
class GlobalModel:
    params: np.ndarray
    d: int
    C: int

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64).ravel()
        if params.size != self.C * (self.d + 1):
            raise ValueError(f"logistic model with d={self.d}, C={self.C} needs "
                             f"{self.C * (self.d + 1)} params, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ValueError("model parameters must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @classmethod
    def zeros(cls, d: int, C: int) -> "GlobalModel":
        return cls(np.zeros(C * (d + 1)), d, C)

    @property
    def n_params(self) -> int:
        return self.params.size

    def weights(self) -> np.ndarray:
        return self.params.reshape(self.C, self.d + 1)

    def logits(self, X) -> np.ndarray:
        W = self.weights()
        return X @ W[:, :-1].T + W[:, -1]

    def predict(self, X) -> np.ndarray:
        # argmax breaks ties toward the lowest class index
        return np.argmax(self.logits(X), axis=1)


def _check_dims(model: GlobalModel, data: Dataset):
    if data.d != model.d or data.n_classes != model.C:
        raise ValueError(f"model (d={model.d}, C={model.C}) does not match data "
                         f"(d={data.d}, C={data.n_classes})")


def eval_loss(model: GlobalModel, data: Dataset) -> float:
    """Mean cross-entropy of the model on ``data``."""
    if data is None or len(data) == 0:
        raise ValueError("cannot evaluate loss on an empty dataset")
    _check_dims(model, data)
    z = model.logits(data.X)
    per_sample = logsumexp(z, axis=1) - z[np.arange(len(data)), data.y]
    return float(np.mean(per_sample))


def eval_accuracy(model: GlobalModel, data: Dataset) -> float:
    _check_dims(model, data)
    return float(np.mean(model.predict(data.X) == data.y))


def eval_backdoor_metrics(model: GlobalModel, poisoned: Dataset) -> dict:
    """Loss on triggered samples relabeled to the target, and attack success rate."""
    if poisoned.target_label is None:
        raise ValueError("dataset carries no backdoor target; build it with attacks.backdoor_poison")
    _check_dims(model, poisoned)
    mask = poisoned.poisoned_mask if poisoned.poisoned_mask is not None else np.ones(len(poisoned), bool)
    X = poisoned.X[mask]
    z = model.logits(X)
    target = poisoned.target_label
    loss = float(np.mean(logsumexp(z, axis=1) - z[:, target]))
    acc = float(np.mean(np.argmax(z, axis=1) == target))
    return {"loss": loss, "backdoor_accuracy": acc}


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    d: int = 10
    C: int = 3
    per_class: int = 200
    cluster_spread: float = 0.3
    heterogeneity: Optional[float] = None  # None means i.i.d. (q = 1/C)

    def __post_init__(self):
        if self.d < 2 or self.C < 2 or self.per_class < 1:
            raise ValueError("synthetic task needs d >= 2, C >= 2 and per_class >= 1")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")
        q = self.q
        if not (1.0 / self.C - 1e-12 <= q <= 1.0):
            raise ValueError(f"heterogeneity q must lie in [1/C, 1] = [{1.0 / self.C:.4g}, 1], got {q}")

    @property
    def q(self) -> float:
        return 1.0 / self.C if self.heterogeneity is None else float(self.heterogeneity)


@dataclasses.dataclass(frozen=True, eq=False)
class SyntheticTask:
    spec: SyntheticSpec
    means: np.ndarray
    clients: tuple
    eval: Dataset
    root: Dataset


def class_means(d: int, C: int, rng: np.random.Generator) -> np.ndarray:
    """``C`` points in ``R^d`` with minimum pairwise distance exactly 1."""
    G = rng.standard_normal((max(d, C), d))
    if C <= d:
        Q, _ = np.linalg.qr(G[:d].T)
        means = Q[:, :C].T / math.sqrt(2.0)
    else:
        means = G[:C]
        dist = np.linalg.norm(means[:, None] - means[None], axis=-1)
        means = means / dist[np.triu_indices(C, 1)].min()
    return means


def _draw(means, counts, spread, rng, C):
    ys = np.repeat(np.arange(C), counts)
    X = means[ys] + spread * rng.standard_normal((len(ys), means.shape[1]))
    return X, ys


def partition(X, y, C: int, n_clients: int, q: float, rng: np.random.Generator) -> tuple:
    """Split samples over clients arranged in ``C`` label groups.

    A sample with label ``c`` goes to group ``c`` with probability ``q`` and
    to each other group with probability ``(1 - q) / (C - 1)``; within the
    group the client is uniform.
    """
    groups = np.arange(n_clients) % C
    members = [np.flatnonzero(groups == g) for g in range(C)]
    if any(len(m) == 0 for m in members):
        raise ValueError(f"need at least C={C} clients to form label groups")
    own = rng.random(len(y)) < q
    other = (y + 1 + rng.integers(0, C - 1, size=len(y))) % C
    group = np.where(own, y, other)
    slot = rng.random(len(y))
    owner = np.array([members[g][int(s * len(members[g]))] for g, s in zip(group, slot)])
    clients = []
    for i in range(n_clients):
        idx = np.flatnonzero(owner == i)
        if len(idx) == 0:
            raise ValueError(f"client {i} received no samples; increase per_class")
        clients.append(Dataset(X[idx], y[idx], C))
    return tuple(clients)


def _balanced_counts(total, C):
    counts = np.full(C, total // C)
    counts[: total % C] += 1
    return counts


def make_synthetic_task(spec: SyntheticSpec, n_clients: int, rng: np.random.Generator,
                        n_eval: int = 300, n_root: int = 100) -> SyntheticTask:
    """Client shards plus a held-out server evaluation split and a root split."""
    C = spec.C
    means = class_means(spec.d, C, rng)
    X, y = _draw(means, np.full(C, spec.per_class), spec.cluster_spread, rng, C)
    clients = partition(X, y, C, n_clients, spec.q, rng)
    Xe, ye = _draw(means, _balanced_counts(n_eval, C), spec.cluster_spread, rng, C)
    Xr, yr = _draw(means, _balanced_counts(n_root, C), spec.cluster_spread, rng, C)
    return SyntheticTask(spec, means, clients, Dataset(Xe, ye, C), Dataset(Xr, yr, C))


def task_from_dataset(data: Dataset, n_clients: int, q: Optional[float], rng: np.random.Generator,
                      n_eval: int = 300, n_root: int = 100) -> SyntheticTask:
    """Carve evaluation and root splits off a loaded dataset and partition the rest."""
    if n_eval + n_root >= len(data):
        raise ValueError("dataset too small for the requested evaluation and root splits")
    perm = rng.permutation(len(data))
    X, y = data.X[perm], data.y[perm]
    C = data.n_classes
    ev = Dataset(X[:n_eval], y[:n_eval], C)
    root = Dataset(X[n_eval:n_eval + n_root], y[n_eval:n_eval + n_root], C)
    rest = slice(n_eval + n_root, None)
    qq = 1.0 / C if q is None else q
    clients = partition(X[rest], y[rest], C, n_clients, qq, rng)
    return SyntheticTask(None, None, clients, ev, root)


def make_synthetic_dataset(spec: SyntheticSpec, rng: np.random.Generator, n_clients: int = 10) -> list:
    return list(make_synthetic_task(spec, n_clients, rng).clients)


_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) into an array."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path} is not an IDX file (bad magic)")
    dtype_code, ndim = raw[2], raw[3]
    if dtype_code not in _IDX_DTYPES:
        raise ValueError(f"{path}: unsupported IDX element type 0x{dtype_code:02x}")
    dims = np.frombuffer(raw, dtype=">u4", count=ndim, offset=4)
    data = np.frombuffer(raw, dtype=_IDX_DTYPES[dtype_code], offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload size does not match header dimensions {tuple(dims)}")
    return data.reshape(tuple(int(x) for x in dims))


def _pool(images: np.ndarray, side: int) -> np.ndarray:
    n, h, w = images.shape
    rows = np.array_split(np.arange(h), side)
    cols = np.array_split(np.arange(w), side)
    out = np.empty((n, side, side))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            out[:, i, j] = images[:, r[0]:r[-1] + 1, c[0]:c[-1] + 1].mean(axis=(1, 2))
    return out.reshape(n, side * side)


def load_idx_dataset(images_path, labels_path, d: int, n_classes: Optional[int] = None,
                     limit: Optional[int] = None) -> Dataset:
    """Images average-pooled to ``sqrt(d) x sqrt(d)`` and standardised to [0, 1]."""
    side = math.isqrt(d)
    if side * side != d:
        raise ValueError(f"IDX ingestion pools to a square grid; d={d} is not a perfect square")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError("expected a 3-d image file (magic 0x803) and a matching 1-d label file (0x801)")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = _pool(images.astype(np.float64) / 255.0, side)
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    return Dataset(X, labels.astype(np.int64), C)
