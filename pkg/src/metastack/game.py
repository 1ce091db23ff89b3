"""Game-level abstractions shared by every environment.

Attacker types and the type prior, single trajectories and batched rollouts,
discounted returns and trajectory log-probabilities.  Nothing here knows about
federated learning; the FL environment, the tabular toy MDP and the bandits
all emit the same :class:`TrajectoryBatch`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np

__all__ = [
    "CATEGORIES",
    "RULE_IDS",
    "AttackTypeSpec",
    "TypePrior",
    "TrajectoryStep",
    "Trajectory",
    "TrajectoryBatch",
    "sample_type",
    "sample_types",
    "discounted_return",
    "trajectory_log_prob",
    "params_digest",
    "concat_batches",
    "load_prior",
    "save_prior",
]

CATEGORIES = ("untargeted", "backdoor", "mixed")
RULE_IDS = ("ipm", "lmp", "eb", "bfl_static")

PRIOR_SUM_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class AttackTypeSpec:
    """One hidden attacker type.

    ``behavior`` is either ``"adaptive"`` (an RL attacker with its own policy)
    or one of :data:`RULE_IDS`.  ``params`` carries rule knobs such as
    ``eps`` (IPM), ``boost`` (EB), ``lambda0``/``aggregator`` (LMP) and
    ``poison_fraction`` (backdoor shards).
    """

    id: int
    category: str
    m1: int
    m2: int
    behavior: str = "adaptive"
    trigger: Optional[tuple] = None
    target_label: Optional[int] = None
    lambda_mix: float = 0.5
    params: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}; expected one of {CATEGORIES}")
        if self.behavior != "adaptive" and self.behavior not in RULE_IDS:
            raise ValueError(f"unknown behavior {self.behavior!r}; expected 'adaptive' or one of {RULE_IDS}")
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("malicious client counts must be non-negative")
        if self.m1 + self.m2 < 1:
            raise ValueError("an attack type needs at least one malicious client (m1 + m2 >= 1)")
        if not 0.0 <= self.lambda_mix <= 1.0:
            raise ValueError(f"lambda_mix must lie in [0, 1], got {self.lambda_mix}")
        wants_backdoor = self.category in ("backdoor", "mixed")
        has_backdoor = self.trigger is not None and self.target_label is not None
        if wants_backdoor != has_backdoor:
            raise ValueError(
                "trigger and target_label must be given exactly when the category is backdoor or mixed"
            )
        if self.trigger is not None:
            object.__setattr__(self, "trigger", tuple(float(v) for v in self.trigger))
        if self.category == "untargeted" and self.m1 != 0:
            raise ValueError("untargeted types have no backdoor clients (m1 must be 0)")
        if self.category == "backdoor" and self.m2 != 0:
            raise ValueError("backdoor types have no untargeted clients (m2 must be 0)")
        if self.category == "mixed" and (self.m1 == 0 or self.m2 == 0):
            raise ValueError("mixed types need both backdoor and untargeted clients")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def rho(self) -> float:
        return self.m1 / (self.m1 + self.m2)

    @property
    def adaptive(self) -> bool:
        return self.behavior == "adaptive"

    @property
    def n_malicious(self) -> int:
        return self.m1 + self.m2

    def trigger_array(self) -> np.ndarray:
        if self.trigger is None:
            raise ValueError(f"type {self.id} has no backdoor trigger")
        return np.asarray(self.trigger, dtype=float)

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "category": self.category,
            "m1": self.m1,
            "m2": self.m2,
            "behavior": self.behavior,
            "lambda_mix": self.lambda_mix,
        }
        if self.trigger is not None:
            out["trigger"] = list(self.trigger)
            out["target_label"] = self.target_label
        if self.params:
            out["params"] = dict(self.params)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AttackTypeSpec":
        d = dict(d)
        d.pop("prob", None)
        trigger = d.pop("trigger", None)
        return cls(
            id=int(d.pop("id")),
            category=d.pop("category"),
            m1=int(d.pop("m1", 0)),
            m2=int(d.pop("m2", 0)),
            behavior=d.pop("behavior", "adaptive"),
            trigger=tuple(trigger) if trigger is not None else None,
            target_label=d.pop("target_label", None),
            lambda_mix=float(d.pop("lambda_mix", 0.5)),
            params=d.pop("params", {}),
        )


@dataclasses.dataclass(frozen=True)
class TypePrior:
    """Finite prior over attacker types."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((spec, float(p)) for spec, p in self.entries)
        if not entries:
            raise ValueError("type prior is empty")
        ids = [spec.id for spec, _ in entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"type ids must be unique, got {ids}")
        for spec, p in entries:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability of type {spec.id} is {p}, outside [0, 1]")
        total = math.fsum(p for _, p in entries)
        if abs(total - 1.0) > PRIOR_SUM_TOL:
            raise ValueError(f"probabilities sum to {total:.12g}, expected 1")
        object.__setattr__(self, "entries", entries)

    @property
    def types(self) -> list:
        return [spec for spec, _ in self.entries]

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.entries])

    def __len__(self):
        return len(self.entries)

    def by_id(self, type_id: int) -> AttackTypeSpec:
        for spec, _ in self.entries:
            if spec.id == type_id:
                return spec
        known = [spec.id for spec, _ in self.entries]
        raise KeyError(f"unknown attack type id {type_id}; known ids: {known}")

    def prob_of(self, type_id: int) -> float:
        for spec, p in self.entries:
            if spec.id == type_id:
                return p
        raise KeyError(type_id)

    def to_json(self) -> dict:
        return {"types": [dict(spec.to_dict(), prob=p) for spec, p in self.entries]}

    @classmethod
    def from_json(cls, doc: dict) -> "TypePrior":
        if "types" not in doc:
            raise ValueError("prior document needs a top-level 'types' list")
        entries = []
        for item in doc["types"]:
            if "prob" not in item:
                raise ValueError(f"type entry {item.get('id')} has no 'prob'")
            entries.append((AttackTypeSpec.from_dict(item), float(item["prob"])))
        return cls(tuple(entries))


def load_prior(path) -> TypePrior:
    with open(path) as fh:
        return TypePrior.from_json(json.load(fh))


def save_prior(prior: TypePrior, path) -> None:
    Path(path).write_text(json.dumps(prior.to_json(), indent=2) + "\n")


def sample_type(prior: TypePrior, rng: np.random.Generator) -> AttackTypeSpec:
    """Draw one type from the prior by inverse-CDF lookup."""
    cdf = np.cumsum(prior.probs)
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    return prior.entries[min(idx, len(prior) - 1)][0]


def sample_types(prior: TypePrior, k: int, rng: np.random.Generator) -> list:
    """``k`` i.i.d. draws (with replacement), as used for a meta-iteration batch."""
    return [sample_type(prior, rng) for _ in range(k)]


def params_digest(flat) -> str:
    if flat is None:
        return ""
    arr = np.ascontiguousarray(np.asarray(flat, dtype=np.float64))
    return hashlib.blake2b(arr.tobytes(), digest_size=8).hexdigest()


class TrajectoryStep(NamedTuple):
    env_state_digest: Any
    defender_obs: np.ndarray
    attacker_obs: Optional[np.ndarray]
    a_D: np.ndarray
    a_A: Optional[np.ndarray]
    r_D: float
    r_A: float
    logp_D: Optional[float]
    logp_A: Optional[float]
    n_malicious: int = 0


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """A single length-H rollout with cached per-step log-probabilities."""

    steps: tuple
    horizon: int
    discount: float
    type_id: int = 0

    def __post_init__(self):
        if len(self.steps) != self.horizon:
            raise ValueError(f"trajectory has {len(self.steps)} steps, horizon is {self.horizon}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        for t, st in enumerate(self.steps):
            if st.r_D > 0:
                raise ValueError(f"defender reward must be <= 0, step {t} has {st.r_D}")
            for lp in (st.logp_D, st.logp_A):
                if lp is not None and not np.isfinite(lp):
                    raise ValueError(f"non-finite cached log-probability at step {t}")
            if st.n_malicious == 0 and st.r_A != 0.0:
                raise ValueError(f"step {t} sampled no malicious client but r_A = {st.r_A}")


def discounted_return(tau: Trajectory, who: str = "defender") -> float:
    """``sum_{t=1..H} gamma**t * r_t`` for the requested player."""
    field = _reward_field(who)
    total = 0.0
    weight = 1.0
    for st in tau.steps:
        weight *= tau.discount
        total += weight * getattr(st, field)
    return total


def trajectory_log_prob(tau: Trajectory, which: str = "defender") -> float:
    """Sum of the cached per-step policy log-probabilities of one player.

    Transition-kernel factors are deliberately left out: they do not depend on
    the policy parameters and vanish from every score-function gradient.
    """
    field = "logp_D" if _reward_field(which) == "r_D" else "logp_A"
    total = 0.0
    for t, st in enumerate(tau.steps):
        lp = getattr(st, field)
        if lp is None:
            raise ValueError(
                f"step {t} has no cached {field}; re-run the rollout with log-probability caching"
            )
        total += lp
    return total


def _reward_field(who: str) -> str:
    if who in ("defender", "D"):
        return "r_D"
    if who in ("attacker", "A"):
        return "r_A"
    raise ValueError(f"who must be 'defender' or 'attacker', got {who!r}")


@dataclasses.dataclass
class TrajectoryBatch:
    """``N`` trajectories of horizon ``H`` stored as stacked arrays.

    Action arrays hold the *pre-squash* policy samples, which is what the score
    functions need.  Attacker arrays are ``None`` when the attacker follows a
    fixed rule (its log-probabilities are then zero).
    """

    obs_D: np.ndarray
    act_D: np.ndarray
    logp_D: np.ndarray
    r_D: np.ndarray
    r_A: np.ndarray
    n_malicious: np.ndarray
    gamma: float
    type_id: int = 0
    obs_A: Optional[np.ndarray] = None
    act_A: Optional[np.ndarray] = None
    logp_A: Optional[np.ndarray] = None
    theta_digest: str = ""
    phi_digest: str = ""
    state_digest: Optional[np.ndarray] = None
    info: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.r_D.ndim != 2:
            raise ValueError("reward arrays must have shape (N, H)")
        if np.any(self.r_D > 0):
            raise ValueError("defender rewards must be <= 0")
        if np.any((self.n_malicious == 0) & (self.r_A != 0)):
            raise ValueError("attacker reward must be 0 at steps with no sampled malicious client")
        if not np.all(np.isfinite(self.logp_D)):
            raise ValueError("non-finite defender log-probabilities in batch")
        if self.logp_A is not None and not np.all(np.isfinite(self.logp_A)):
            raise ValueError("non-finite attacker log-probabilities in batch")

    @property
    def n(self) -> int:
        return self.r_D.shape[0]

    @property
    def horizon(self) -> int:
        return self.r_D.shape[1]

    def discount_weights(self) -> np.ndarray:
        return self.gamma ** np.arange(1, self.horizon + 1)

    def returns(self, who: str = "defender") -> np.ndarray:
        rewards = self.r_D if _reward_field(who) == "r_D" else self.r_A
        return rewards @ self.discount_weights()

    def log_prob_sums(self, which: str = "defender") -> np.ndarray:
        if _reward_field(which) == "r_D":
            return self.logp_D.sum(axis=1)
        if self.logp_A is None:
            return np.zeros(self.n)
        return self.logp_A.sum(axis=1)

    def player_arrays(self, who: str):
        """(obs, actions) for the player; raises for a rule attacker."""
        if _reward_field(who) == "r_D":
            return self.obs_D, self.act_D
        if self.obs_A is None:
            raise ValueError("rule-based attacker has no policy samples in this batch")
        return self.obs_A, self.act_A

    def trajectory(self, i: int) -> Trajectory:
        steps = []
        for t in range(self.horizon):
            steps.append(
                TrajectoryStep(
                    env_state_digest=None if self.state_digest is None else self.state_digest[i, t],
                    defender_obs=self.obs_D[i, t],
                    attacker_obs=None if self.obs_A is None else self.obs_A[i, t],
                    a_D=self.act_D[i, t],
                    a_A=None if self.act_A is None else self.act_A[i, t],
                    r_D=float(self.r_D[i, t]),
                    r_A=float(self.r_A[i, t]),
                    logp_D=float(self.logp_D[i, t]),
                    logp_A=0.0 if self.logp_A is None else float(self.logp_A[i, t]),
                    n_malicious=int(self.n_malicious[i, t]),
                )
            )
        return Trajectory(tuple(steps), self.horizon, self.gamma, self.type_id)

    def __iter__(self):
        return (self.trajectory(i) for i in range(self.n))


def concat_batches(batches: Sequence[TrajectoryBatch]) -> TrajectoryBatch:
    """Stack batches collected under the same parameters."""
    first = batches[0]

    def cat(name):
        vals = [getattr(b, name) for b in batches]
        if vals[0] is None:
            return None
        return np.concatenate(vals, axis=0)

    return TrajectoryBatch(
        obs_D=cat("obs_D"),
        act_D=cat("act_D"),
        logp_D=cat("logp_D"),
        r_D=cat("r_D"),
        r_A=cat("r_A"),
        n_malicious=cat("n_malicious"),
        gamma=first.gamma,
        type_id=first.type_id,
        obs_A=cat("obs_A"),
        act_A=cat("act_A"),
        logp_A=cat("logp_A"),
        theta_digest=first.theta_digest,
        phi_digest=first.phi_digest,
        state_digest=cat("state_digest"),
        info={k: np.concatenate([b.info[k] for b in batches]) for k in first.info},
    )
