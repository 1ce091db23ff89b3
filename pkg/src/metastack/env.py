"""Desk-scale federated learning as a Bayesian Stackelberg Markov game.

One round: the sampled clients train locally, the malicious ones replace
their update according to the attacker type, the server aggregates with the
defense configured by the defender's action and clamps the result.  The
defender is rewarded with ``-F`` (clean eval loss of the new model), the
attacker with a ρ/λ mix of clean and backdoor losses.

:meth:`FLGame.rollout` simulates a whole batch of trajectories at once; the
per-state API (:meth:`FLGame.reset`, :meth:`FLGame.step`) runs the same code
with a batch of one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from typing import Optional

import numpy as np

from . import policy as pol
from .attacks import AttackAction, AttackBox, LMPSearch, backdoor_poison, batched_attack_action, lmp_update
from .data import (Dataset, GlobalModel, SyntheticSpec, load_idx_dataset, make_synthetic_task,
                   task_from_dataset)
from .defenses import DEFENSE_IDS, DefenseAction, DefenseBox, FixedDefense, batched_pipeline_aggregate
from .game import AttackTypeSpec, TrajectoryBatch
from .rng import Streams

__all__ = [
    "EnvConfig",
    "EnvState",
    "EvalSets",
    "FLGame",
    "DEFENDER_OBS_DIM",
    "ATTACKER_OBS_DIM",
    "DEFENDER_ACT_DIM",
    "ATTACKER_ACT_DIM",
    "rewards",
    "reward_arrays",
]

DEFENDER_OBS_DIM = 8
ATTACKER_OBS_DIM = DEFENDER_OBS_DIM + 2
DEFENDER_ACT_DIM = 4
ATTACKER_ACT_DIM = 3
SIGN_MODES = ("consistent", "literal")


@dataclasses.dataclass(frozen=True)
class EnvConfig:
    """Static description of the federated environment.

    ``defense`` is ``"rl"`` (the defender policy drives the 4-knob pipeline)
    or one of the fixed baseline ids.  ``idx_images``/``idx_labels`` switch
    the data source from the synthetic generator to IDX files.
    """

    n_clients: int = 20
    subsample_count: int = 10
    local_lr: float = 0.05
    local_steps: int = 1
    horizon: int = 10
    discount: float = 0.99
    dataset: SyntheticSpec = SyntheticSpec()
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None
    n_eval: int = 300
    n_root: int = 100
    defense: str = "rl"
    fixed_trim_frac: float = 0.2
    krum_f: int = 1
    defense_box: DefenseBox = DefenseBox()
    attack_box: AttackBox = AttackBox()
    reward_sign_mode: str = "consistent"
    attacker_sees_benign_mean: bool = True
    poison_fraction: float = 0.5

    def __post_init__(self):
        if not 1 <= self.subsample_count <= self.n_clients:
            raise ValueError(f"subsample_count must lie in [1, n_clients={self.n_clients}], "
                             f"got {self.subsample_count}")
        if self.horizon < 1:
            raise ValueError("horizon H must be at least 1")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.local_steps < 1 or not self.local_lr > 0:
            raise ValueError("local training needs local_steps >= 1 and local_lr > 0")
        if self.defense != "rl" and self.defense not in DEFENSE_IDS:
            raise ValueError(f"unknown defense {self.defense!r}; expected 'rl' or one of {DEFENSE_IDS}")
        if self.reward_sign_mode not in SIGN_MODES:
            raise ValueError(f"reward_sign_mode must be one of {SIGN_MODES}, got {self.reward_sign_mode!r}")
        if (self.idx_images is None) != (self.idx_labels is None):
            raise ValueError("IDX ingestion needs both an image file and a label file")


@dataclasses.dataclass(frozen=True, eq=False)
class EnvState:
    model: GlobalModel
    identity: np.ndarray
    round: int
    subset: np.ndarray
    # statistics of the updates received in the previous round
    update_stats: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        if len(self.identity) != len(self.subset):
            raise ValueError("identity vector length must equal the subset size")
        if not np.all(np.isin(self.identity, (0, 1))):
            raise ValueError("identity entries must be 0 or 1")

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        for arr in (self.model.params, self.identity, self.subset, self.update_stats):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.round).encode())
        return h.hexdigest()


@dataclasses.dataclass(frozen=True, eq=False)
class EvalSets:
    clean: Dataset
    backdoor: Optional[Dataset] = None


def reward_arrays(F, F_bd, xi: AttackTypeSpec, mode: str = "consistent"):
    """``(r_D, r_A)`` from clean loss ``F`` and backdoor loss ``F_bd``.

    ``F_bd`` is ignored for types without a backdoor component.  The
    all-benign zero clause is the caller's job.
    """
    if xi is None:
        raise ValueError("attacker reward needs a type (rho undefined without malicious clients)")
    F = np.asarray(F, dtype=float)
    rho = xi.rho
    F_prime = F if xi.category == "untargeted" else xi.lambda_mix * F + (1.0 - xi.lambda_mix) * np.asarray(F_bd)
    if mode == "consistent":
        r_A = -rho * F_prime + (1.0 - rho) * F
    elif mode == "literal":
        r_A = rho * F_prime - (1.0 - rho) * F
    else:
        raise ValueError(f"unknown reward_sign_mode {mode!r}")
    return -F, r_A


def rewards(model_after: GlobalModel, xi: AttackTypeSpec, cfg: EnvConfig, eval_sets: EvalSets):
    """Rewards for one post-processed model."""
    from .data import eval_backdoor_metrics, eval_loss

    F = eval_loss(model_after, eval_sets.clean)
    F_bd = None
    if xi is not None and xi.category != "untargeted":
        if eval_sets.backdoor is None:
            raise ValueError(f"type {xi.id} has a backdoor objective but no backdoor eval set was given")
        F_bd = eval_backdoor_metrics(model_after, eval_sets.backdoor)["loss"]
    r_D, r_A = reward_arrays(F, F_bd, xi, cfg.reward_sign_mode)
    return float(r_D), float(r_A)


def _with_bias(X):
    return np.concatenate([X, np.ones((len(X), 1))], axis=1)


def _pad_shards(shards, C):
    m = max(len(s) for s in shards)
    k = shards[0].d + 1
    X = np.zeros((len(shards), m, k))
    Y = np.zeros((len(shards), m, C))
    inv = np.empty(len(shards))
    for i, s in enumerate(shards):
        X[i, : len(s)] = _with_bias(s.X)
        Y[i, np.arange(len(s)), s.y] = 1.0
        inv[i] = 1.0 / len(s)
    return X, Y, inv


def _lse(Z):
    m = Z.max(axis=-1)
    return m + np.log(np.exp(Z - m[..., None]).sum(axis=-1))


def _softmax(Z):
    E = np.exp(Z - Z.max(axis=-1, keepdims=True))
    return E / E.sum(axis=-1, keepdims=True)


def _ce(W, X1, y):
    """Mean cross-entropy per batch element: ``W`` is ``(B, C, k)``."""
    Z = X1 @ W.transpose(0, 2, 1)
    return np.mean(_lse(Z) - Z[:, np.arange(len(y)), y], axis=1), Z


def _digest_rows(W):
    return np.array([int.from_bytes(hashlib.blake2b(row.tobytes(), digest_size=8).digest(), "little")
                     for row in W], dtype=np.uint64)


def _update_stats(U):
    """[mean, min, max] pairwise cosine and [mean, max] norm of ``(B, S, P)`` updates."""
    B, S, _ = U.shape
    norms = np.linalg.norm(U, axis=2)
    unit = U / np.where(norms > 0, norms, 1.0)[..., None]
    out = np.zeros((B, 5))
    if S > 1:
        cos = np.einsum("bip,bjp->bij", unit, unit)
        iu = np.triu_indices(S, 1)
        pairs = cos[:, iu[0], iu[1]]
        out[:, 0] = pairs.mean(axis=1)
        out[:, 1] = pairs.min(axis=1)
        out[:, 2] = pairs.max(axis=1)
    out[:, 3] = norms.mean(axis=1)
    out[:, 4] = norms.max(axis=1)
    return out


class FLGame:
    """A federated environment built once from ``(cfg, seed)``.

    Data, client shards and per-type poisoned shards are derived from
    ``seed`` only, so two instances with the same arguments are identical.
    """

    def __init__(self, cfg: EnvConfig = EnvConfig(), seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.streams = Streams(seed).child("env")
        data_rng = self.streams.get("data")
        if cfg.idx_images is not None:
            d = cfg.dataset.d
            full = load_idx_dataset(cfg.idx_images, cfg.idx_labels, d)
            self.task = task_from_dataset(full, cfg.n_clients, cfg.dataset.heterogeneity, data_rng,
                                          cfg.n_eval, cfg.n_root)
        else:
            self.task = make_synthetic_task(cfg.dataset, cfg.n_clients, data_rng, cfg.n_eval, cfg.n_root)
        self.clients = self.task.clients
        self.d = self.clients[0].d
        self.C = self.clients[0].n_classes
        self.n_params = self.C * (self.d + 1)
        self.eval_set = self.task.eval
        self.root = self.task.root
        self._eval_X1 = _with_bias(self.eval_set.X)
        self._root = _pad_shards([self.root], self.C)
        self._clean_shards = _pad_shards(self.clients, self.C)
        allX = np.concatenate([c.X for c in self.clients])
        sigma = float(allX.std())
        self.clip_range = (min(float(allX.min()), -3 * sigma), max(float(allX.max()), 3 * sigma))
        self._type_cache = {}

    # ------------------------------------------------------------------ data per type
    def _type_data(self, xi: Optional[AttackTypeSpec]):
        if xi is None or xi.m1 == 0:
            return self._clean_shards, None
        key = (xi.id, xi.trigger, xi.target_label, xi.m1, xi.params.get("poison_fraction"))
        if key not in self._type_cache:
            if xi.m1 > self.cfg.n_clients:
                raise ValueError(f"type {xi.id} has more malicious clients than the federation")
            frac = float(xi.params.get("poison_fraction", self.cfg.poison_fraction))
            trig = xi.trigger_array()
            shards = list(self.clients)
            for i in range(xi.m1):
                rng = self.streams.get("poison", xi.id, i)
                shards[i] = backdoor_poison(shards[i], trig, xi.target_label, frac, rng, self.clip_range)
            keep = self.eval_set.y != xi.target_label
            base = Dataset(self.eval_set.X[keep], self.eval_set.y[keep], self.C)
            bd_eval = backdoor_poison(base, trig, xi.target_label, 1.0, self.streams.get("bd_eval", xi.id),
                                      self.clip_range)
            self._type_cache[key] = (_pad_shards(shards, self.C), bd_eval)
        return self._type_cache[key]

    def eval_sets(self, xi: Optional[AttackTypeSpec] = None) -> EvalSets:
        return EvalSets(self.eval_set, self._type_data(xi)[1])

    def initial_params(self) -> np.ndarray:
        return np.zeros(self.n_params)

    # ------------------------------------------------------------------ observation
    def _obs_D(self, W, F, stats, t):
        B = len(W)
        obs = np.empty((B, DEFENDER_OBS_DIM))
        obs[:, 0] = np.linalg.norm(W.reshape(B, -1), axis=1)
        obs[:, 1] = F
        obs[:, 2:7] = stats
        obs[:, 7] = t / self.cfg.horizon
        return obs

    def _obs_A(self, obs_D, n_mal, t):
        extra = np.stack([n_mal.astype(float), np.full(len(obs_D), t / self.cfg.horizon)], axis=1)
        return np.concatenate([obs_D, extra], axis=1)

    def observe_defender(self, state: EnvState) -> np.ndarray:
        W = state.model.weights()[None]
        F, _ = _ce(W, self._eval_X1, self.eval_set.y)
        return self._obs_D(W, F, state.update_stats[None], state.round)[0]

    def observe_attacker(self, state: EnvState, xi: Optional[AttackTypeSpec]) -> np.ndarray:
        n_mal = np.array([int(state.identity.sum())])
        return self._obs_A(self.observe_defender(state)[None], n_mal, state.round)[0]

    # ------------------------------------------------------------------ dynamics
    def _sample_subset(self, B, xi, rng):
        cfg = self.cfg
        subset = np.argsort(rng.random((B, cfg.n_clients)), axis=1)[:, : cfg.subsample_count]
        if xi is None:
            return subset, np.zeros_like(subset, dtype=np.int8)
        return subset, (subset < xi.n_malicious).astype(np.int8)

    def _local_train(self, W, X, Y, inv):
        """Local gradient steps from ``W`` (B, C, k) on shards ``X`` (B, S, m, k)."""
        cfg = self.cfg
        W_loc = np.broadcast_to(W[:, None], (X.shape[0], X.shape[1]) + W.shape[1:]).copy()
        for _ in range(cfg.local_steps):
            Z = X @ W_loc.swapaxes(2, 3)
            G = ((_softmax(Z) - Y).swapaxes(2, 3) @ X) * inv[:, :, None, None]
            W_loc -= cfg.local_lr * G
        return (W[:, None] - W_loc).reshape(X.shape[0], X.shape[1], -1)

    def _malicious(self, xi, honest, subset, ident, act_A, rng):
        """Replace the malicious rows of ``honest`` in place; returns it."""
        U = honest
        B, S, P = U.shape
        benign = ident == 0
        nb = benign.sum(axis=1)
        bmean = np.einsum("bsp,bs->bp", U, benign.astype(float)) / np.maximum(nb, 1)[:, None]
        visible = bmean if self.cfg.attacker_sees_benign_mean else np.zeros_like(bmean)
        groups = [(subset < xi.m1, "backdoor"), ((subset >= xi.m1) & (subset < xi.n_malicious), "untargeted")]
        prm = xi.params
        for mask, kind in groups:
            count = mask.sum(axis=1)
            if not count.any():
                continue
            own = np.einsum("bsp,bs->bp", U, mask.astype(float)) / np.maximum(count, 1)[:, None]
            if kind == "untargeted":
                own = -own  # ascent on the client's own loss
            rule = xi.behavior
            if rule == "adaptive":
                vec = batched_attack_action(act_A, visible, own, rng)
            elif kind == "backdoor":
                boost = prm.get("boost", 1.0) if rule == "eb" else prm.get("backdoor_boost", 1.0)
                vec = boost * own
            elif rule == "ipm":
                vec = -float(prm.get("eps", 1.0)) * bmean
            elif rule == "lmp":
                vec = np.zeros((B, P))
                for b in np.flatnonzero(count):
                    if nb[b] == 0:
                        continue
                    search = LMPSearch(lambda0=float(prm.get("lambda0", 10.0)), n_copies=int(count[b]),
                                       krum_f=self.cfg.krum_f, trim_frac=self.cfg.fixed_trim_frac)
                    vec[b] = lmp_update(U[b][benign[b]], prm.get("aggregator", "trimmed_mean"), search)
            else:
                vec = float(prm.get("boost", 1.0)) * own
            U = np.where(mask[..., None], vec[:, None, :], U)
        return U

    def _check_finite(self, U, subset):
        bad = ~np.all(np.isfinite(U), axis=2)
        if bad.any():
            b, s = np.argwhere(bad)[0]
            raise FloatingPointError(f"non-finite update produced by client {int(subset[b, s])}")

    def _aggregate(self, W, U, actions_D, fixed: Optional[FixedDefense], rng):
        B = len(W)
        Wf = W.reshape(B, -1)
        if fixed is None:
            agg = batched_pipeline_aggregate(U, actions_D, rng)
            return np.clip(Wf - agg, -actions_D[:, 3:4], actions_D[:, 3:4])
        server = None
        if fixed.rule == "fltrust":
            Xr, Yr, inv = self._root
            server = self._local_train(W, np.broadcast_to(Xr, (B,) + Xr.shape),
                                       np.broadcast_to(Yr, (B,) + Yr.shape),
                                       np.broadcast_to(inv, (B, 1)))[:, 0]
        agg = np.stack([fixed.aggregate(U[b], None if server is None else server[b]) for b in range(B)])
        out = Wf - agg
        if math.isfinite(fixed.post_clip):
            out = np.clip(out, -fixed.post_clip, fixed.post_clip)
        return out

    def _round(self, W, subset, ident, xi, actions_D, fixed, act_A, rng):
        """One FL round for a batch; returns ``(W_next, F, F_bd, r_D, r_A, stats)``."""
        shards, bd_eval = self._type_data(xi)
        Xs, Ys, inv = shards
        U = self._local_train(W, Xs[subset], Ys[subset], inv[subset])
        if xi is not None and ident.any():
            U = self._malicious(xi, U, subset, ident, act_A, rng)
        self._check_finite(U, subset)
        Wn = self._aggregate(W, U, actions_D, fixed, rng).reshape(W.shape)
        F, _ = _ce(Wn, self._eval_X1, self.eval_set.y)
        F_bd = None
        if bd_eval is not None:
            F_bd, _ = _ce(Wn, _with_bias(bd_eval.X), bd_eval.y)
        if xi is None:
            r_D, r_A = -F, np.zeros_like(F)
        else:
            r_D, r_A = reward_arrays(F, F_bd, xi, self.cfg.reward_sign_mode)
            r_A = np.where(ident.sum(axis=1) > 0, r_A, 0.0)
        return Wn, F, F_bd, r_D, r_A, _update_stats(U)

    def _fixed_defense(self, defense) -> Optional[FixedDefense]:
        if isinstance(defense, FixedDefense):
            return defense
        rule = self.cfg.defense if defense is None else defense
        if rule == "rl":
            return None
        return FixedDefense(rule, trim_frac=self.cfg.fixed_trim_frac, krum_f=self.cfg.krum_f)

    # ------------------------------------------------------------------ per-state API
    def reset(self, rng: np.random.Generator, xi: Optional[AttackTypeSpec] = None) -> EnvState:
        subset, ident = self._sample_subset(1, xi, rng)
        model = GlobalModel(self.initial_params(), self.d, self.C)
        return EnvState(model, ident[0], 0, subset[0])

    def step(self, state: EnvState, a_D, a_A, xi: Optional[AttackTypeSpec], rng: np.random.Generator):
        """Advance one round.  ``a_D`` is a :class:`DefenseAction` or a
        :class:`FixedDefense`; ``a_A`` an :class:`AttackAction` (adaptive
        types) or ``None`` (rule types)."""
        if state.round >= self.cfg.horizon:
            raise ValueError(f"episode finished: round {state.round} >= H={self.cfg.horizon}")
        if state.model.d != self.d or state.model.C != self.C:
            raise ValueError("state model does not match the environment's data dimensions")
        fixed = a_D if isinstance(a_D, FixedDefense) else None
        actions_D = None
        if fixed is None:
            if not isinstance(a_D, DefenseAction):
                a_D = DefenseAction.from_array(a_D)
            actions_D = a_D.as_array()[None]
        act_A = None
        if xi is not None and xi.adaptive:
            if a_A is None:
                raise ValueError(f"type {xi.id} is adaptive and needs an attack action")
            act_A = (a_A.as_array() if isinstance(a_A, AttackAction) else np.asarray(a_A, float))[None]
        W = state.model.weights()[None]
        Wn, F, F_bd, r_D, r_A, stats = self._round(W, state.subset[None], state.identity[None], xi,
                                                   actions_D, fixed, act_A, rng)
        subset, ident = self._sample_subset(1, xi, rng)
        nxt = EnvState(GlobalModel(Wn[0].ravel(), self.d, self.C), ident[0], state.round + 1, subset[0], stats[0])
        return nxt, float(r_D[0]), float(r_A[0])

    # ------------------------------------------------------------------ batched rollouts
    def rollout(self, theta: Optional[pol.PolicyParams], phi: Optional[pol.PolicyParams],
                xi: Optional[AttackTypeSpec], n: int, rng: np.random.Generator,
                deterministic: bool = False, defense=None, horizon: Optional[int] = None) -> TrajectoryBatch:
        """Simulate ``n`` independent episodes.

        Args:
            theta: defender policy; ignored when a fixed defense is in force.
            phi: attacker policy, required for adaptive types.
            xi: attacker type, ``None`` for an attack-free federation.
            n: number of trajectories.
            rng: the only source of randomness used.
            deterministic: act with policy means instead of samples.
            defense: override of ``cfg.defense`` (an id or a :class:`FixedDefense`).
            horizon: override of ``cfg.horizon``.

        Returns:
            A :class:`TrajectoryBatch` whose ``info`` holds final ``clean_loss``,
            ``clean_acc``, ``backdoor_acc`` (NaN without a backdoor) and ``params``.
        """
        cfg = self.cfg
        H = cfg.horizon if horizon is None else horizon
        fixed = self._fixed_defense(defense)
        if fixed is None and theta is None:
            raise ValueError("the RL defense pipeline needs a defender policy theta")
        adaptive = xi is not None and xi.adaptive
        if adaptive and phi is None:
            raise ValueError(f"type {xi.id} is adaptive and needs an attacker policy phi")
        B = n
        W = np.broadcast_to(self.initial_params().reshape(self.C, self.d + 1), (B, self.C, self.d + 1)).copy()
        stats = np.zeros((B, 5))
        F, _ = _ce(W, self._eval_X1, self.eval_set.y)
        subset, ident = self._sample_subset(B, xi, rng)

        obs_D = np.zeros((B, H, DEFENDER_OBS_DIM))
        act_D = np.zeros((B, H, DEFENDER_ACT_DIM))
        logp_D = np.zeros((B, H))
        obs_A = np.zeros((B, H, ATTACKER_OBS_DIM)) if adaptive else None
        act_A = np.zeros((B, H, ATTACKER_ACT_DIM)) if adaptive else None
        logp_A = np.zeros((B, H)) if adaptive else None
        r_D = np.zeros((B, H))
        r_A = np.zeros((B, H))
        n_mal = np.zeros((B, H), dtype=np.int64)
        digests = np.zeros((B, H), dtype=np.uint64)
        F_bd = None
        for t in range(H):
            digests[:, t] = _digest_rows(W.reshape(B, -1))
            oD = self._obs_D(W, F, stats, t)
            obs_D[:, t] = oD
            actions_D = None
            if fixed is None:
                raw, lp = self._act(theta, oD, rng, deterministic)
                act_D[:, t], logp_D[:, t] = raw, lp
                actions_D = cfg.defense_box.squash(raw)
            sqA = None
            n_mal[:, t] = ident.sum(axis=1)
            if adaptive:
                oA = self._obs_A(oD, n_mal[:, t], t)
                obs_A[:, t] = oA
                raw, lp = self._act(phi, oA, rng, deterministic)
                act_A[:, t], logp_A[:, t] = raw, lp
                sqA = cfg.attack_box.squash(raw)
            W, F, F_bd, r_D[:, t], r_A[:, t], stats = self._round(W, subset, ident, xi, actions_D, fixed, sqA, rng)
            subset, ident = self._sample_subset(B, xi, rng)

        Z = self._eval_X1 @ W.transpose(0, 2, 1)
        info = {
            "clean_loss": F.copy(),
            "clean_acc": np.mean(np.argmax(Z, axis=2) == self.eval_set.y, axis=1),
            "backdoor_acc": np.full(B, np.nan),
            "params": W.reshape(B, -1).copy(),
        }
        bd_eval = self._type_data(xi)[1]
        if bd_eval is not None:
            Zb = _with_bias(bd_eval.X) @ W.transpose(0, 2, 1)
            info["backdoor_acc"] = np.mean(np.argmax(Zb, axis=2) == bd_eval.target_label, axis=1)
        return TrajectoryBatch(
            obs_D=obs_D, act_D=act_D, logp_D=logp_D, r_D=r_D, r_A=r_A, n_malicious=n_mal,
            gamma=cfg.discount, type_id=-1 if xi is None else xi.id,
            obs_A=obs_A, act_A=act_A, logp_A=logp_A,
            theta_digest="" if theta is None or fixed is not None else theta.digest(),
            phi_digest=phi.digest() if adaptive else "",
            state_digest=digests, info=info,
        )

    @staticmethod
    def _act(params, obs, rng, deterministic):
        if not deterministic:
            return pol.act(params, obs, rng)
        mean = params.arch.mean(params.flat, obs)
        return mean, pol.log_prob(params, obs, mean)

    # ------------------------------------------------------------------ policies
    def defender_arch(self, hidden: int = 16) -> pol.GaussianMLPArch:
        return pol.GaussianMLPArch(DEFENDER_OBS_DIM, DEFENDER_ACT_DIM, hidden)

    def attacker_arch(self, hidden: int = 16) -> pol.GaussianMLPArch:
        return pol.GaussianMLPArch(ATTACKER_OBS_DIM, ATTACKER_ACT_DIM, hidden)
