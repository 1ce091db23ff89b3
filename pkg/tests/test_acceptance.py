"""End-to-end acceptance runs, one test per criterion.

Each test prints a single ``CRITERION n ... PASS|FAIL`` line (bypassing
output capture) before asserting.  The heavier runs are marked ``slow``;
they are still part of the default ``pytest`` run.
"""

import math
import time

import numpy as np
import pytest

from metastack import cli
from metastack.data import SyntheticSpec
from metastack.defenses import aggregate_mean, aggregate_median, aggregate_trimmed_mean, krum
from metastack.diagnostics import SampledObjectives, fose_residual, sc_check
from metastack.env import EnvConfig, FLGame
from metastack.estimators import adapt, adapted_gradient, hessian_estimate, pg_estimate
from metastack.game import AttackTypeSpec, TypePrior
from metastack.meta import MetaConfig, bse_baseline, make_sampler, meta_sl
from metastack.rng import Streams
from metastack.toy import ToyMDP

THETA_TOY = np.array([0.3, -0.2, 0.5, 0.1])


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, seconds):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f} s)")
    return emit


def _z(est, exact, se):
    return np.abs(est - exact) / np.where(se > 0, se, np.inf)


def test_criterion_1_policy_gradient_oracle(report):
    t0 = time.perf_counter()
    toy = ToyMDP()
    assert len(toy.trajectories()) == 16
    theta = toy.policy(THETA_TOY)
    g = pg_estimate(toy.sample(theta, None, 100_000, Streams(1).get("c1")), theta)
    z = _z(g.vector, toy.exact_grad(theta.flat), g.se)
    secs = time.perf_counter() - t0
    ok = bool(np.all(z <= 3) and secs < 60)
    report(1, ok, f"max|z| = {z.max():.2f} (<= 3)", secs)
    assert ok


def test_criterion_2_hessian_oracle(report):
    t0 = time.perf_counter()
    toy = ToyMDP()
    theta = toy.policy(THETA_TOY)
    h = hessian_estimate(toy.sample(theta, None, 100_000, Streams(2).get("c2")), theta, with_se=True)
    z = _z(h.matrix, toy.exact_hessian_fd(theta.flat, 1e-4), h.se)
    asym = _z(h.matrix - h.matrix.T, 0.0, np.sqrt(h.se ** 2 + h.se.T ** 2))
    secs = time.perf_counter() - t0
    ok = bool(np.all(z <= 3) and np.all(asym <= 3) and secs < 300)
    report(2, ok, f"max|z| vs FD = {z.max():.2f}, max|z| asymmetry = {asym.max():.2f}", secs)
    assert ok


def test_criterion_3_meta_gradient_oracle(report):
    t0 = time.perf_counter()
    toy = ToyMDP()
    theta, eta, n = toy.policy(THETA_TOY), 0.5, 10_000
    rng = Streams(3).get("c3")
    full = np.empty((n, theta.dim))
    rep = np.empty((n, theta.dim))
    for i in range(n):
        b1 = toy.sample(theta, None, 1, rng)
        full[i] = adapted_gradient(theta, None, toy.sample, eta, 1, None, rng, "full", n_eval=8,
                                   adapt_batch=b1).vector
        rep[i] = adapted_gradient(theta, None, toy.sample, eta, 1, None, rng, "reptile", n_eval=8,
                                  adapt_batch=b1).vector
    target = toy.adapted_gradient_fd(theta.flat, eta)
    z = _z(full.mean(axis=0), target, full.std(axis=0, ddof=1) / math.sqrt(n))
    rm = rep.mean(axis=0)
    cos = float(rm @ target / (np.linalg.norm(rm) * np.linalg.norm(target)))
    secs = time.perf_counter() - t0
    ok = bool(np.all(z <= 3) and cos > 0 and secs < 300)
    report(3, ok, f"full-mode max|z| = {z.max():.2f}, reptile cosine = {cos:.3f}", secs)
    assert ok


def test_criterion_4_strict_competitiveness(report):
    t0 = time.perf_counter()
    game = FLGame(EnvConfig(horizon=25, reward_sign_mode="consistent"), 0)
    fits = []
    for xi in (AttackTypeSpec(0, "untargeted", 0, 4, "adaptive"),
               AttackTypeSpec(1, "untargeted", 0, 4, "ipm", params={"eps": 10.0})):
        fits.append(sc_check(game, xi, 1000, Streams(4).get("c4", xi.id)))
    secs = time.perf_counter() - t0
    ok = all(abs(f.c + 1) <= 1e-10 and abs(f.d) <= 1e-10 and f.max_abs_residual <= 1e-10 for f in fits)
    ok = ok and secs < 30
    worst = max(f.max_abs_residual for f in fits)
    report(4, ok, f"c = {[round(f.c, 12) for f in fits]}, max residual = {worst:.1e}", secs)
    assert ok


# ----------------------------------------------------------------------------- slow directional runs


def _residual_prior():
    return TypePrior(((AttackTypeSpec(0, "untargeted", 0, 4, "adaptive"), 0.5),
                      (AttackTypeSpec(1, "untargeted", 0, 4, "ipm", params={"eps": 10.0}), 0.5)))


@pytest.mark.slow
def test_criterion_5_residual_decrease(report):
    t0 = time.perf_counter()
    prior = _residual_prior()
    ratios = []
    for seed in range(5):
        game = FLGame(EnvConfig(n_clients=20, horizon=25, dataset=SyntheticSpec(d=10, C=3)), seed)
        cfg = MetaConfig(N_D=150, N_b=32, N_A=10, eta=0.01, kappa_D=0.05, seed=seed)
        first = {}

        def keep_first(state, rec):
            if state.iteration == 1:
                first["theta"], first["phis"] = state.theta, dict(state.phis)

        state = meta_sl(cfg, prior, game, callback=keep_first)
        obj = SampledObjectives(game, cfg.eta, n_b=32, replicates=8, mode="reptile", seed=seed)
        r1 = fose_residual(first["theta"], first["phis"], prior, obj)
        rN = fose_residual(state.theta, state.phis, prior, obj)
        ratios.append(rN.defender / r1.defender)
    secs = time.perf_counter() - t0
    med = float(np.median(ratios))
    ok = med <= 0.5 and secs < 1800
    report(5, ok, f"median final/first residual = {med:.3f} (<= 0.5), per seed {np.round(ratios, 3).tolist()}",
           secs)
    assert ok


def _conflict_prior():
    a = AttackTypeSpec(0, "untargeted", 0, 4, "ipm", params={"eps": 10.0})
    b = AttackTypeSpec(1, "untargeted", 0, 1, "ipm", params={"eps": 1.0})
    return TypePrior(((a, 0.5), (b, 0.5)))


def _prior_return(game, prior, theta, eta, n_b, seed, n=256):
    total = 0.0
    for xi, p in prior.entries:
        sampler = make_sampler(game, xi)
        th = theta
        if eta > 0:
            th = adapt(theta, sampler(theta, None, n_b, Streams(seed).get("post", xi.id)), eta, "mean_return")
        total += p * sampler(th, None, n, Streams(seed).get("evalx", xi.id)).returns().mean()
    return total


@pytest.mark.slow
def test_criterion_6_adaptation_advantage(report):
    t0 = time.perf_counter()
    prior = _conflict_prior()
    wins, rows = 0, []
    for seed in range(5):
        game = FLGame(EnvConfig(horizon=25, dataset=SyntheticSpec(heterogeneity=1.0)), seed)
        cfg = MetaConfig(N_D=100, N_b=32, eta=0.3, kappa_D=0.05, mode="reptile", seed=seed)
        meta = meta_sl(cfg, prior, game)
        bse = bse_baseline(cfg, prior, game)
        post = _prior_return(game, prior, meta.theta, cfg.eta, cfg.N_b, seed)
        base = _prior_return(game, prior, bse.theta, 0.0, cfg.N_b, seed)
        wins += post >= base
        rows.append(round(float(post - base), 4))
    secs = time.perf_counter() - t0
    ok = wins >= 4 and secs < 2700
    report(6, ok, f"meta_sl (adapted) >= bse in {wins}/5 seeds (need 4); return gaps {rows}", secs)
    assert ok


@pytest.mark.slow
def test_criterion_7_defense_efficacy(report):
    t0 = time.perf_counter()
    xi = AttackTypeSpec(0, "untargeted", 0, 4, "ipm", params={"eps": 10.0})
    prior = TypePrior(((xi, 1.0),))
    gaps = []
    for seed in range(5):
        game = FLGame(EnvConfig(n_clients=20, horizon=25), seed)
        assert xi.n_malicious / game.cfg.n_clients == 0.2
        cfg = MetaConfig(N_D=200, N_b=32, eta=0.01, kappa_D=0.05, seed=seed)
        state = meta_sl(cfg, prior, game)
        rl = game.rollout(state.theta, None, xi, 32, Streams(seed).get("c7", "rl"))
        mean = game.rollout(None, None, xi, 32, Streams(seed).get("c7", "mean"), defense="mean")
        gaps.append(float(np.mean(rl.info["clean_acc"]) - np.mean(mean.info["clean_acc"])))
    secs = time.perf_counter() - t0
    med = float(np.median(gaps))
    ok = med >= 0.10 and secs < 1800
    report(7, ok, f"median accuracy gap = {100 * med:.1f} pp (>= 10), per seed {np.round(gaps, 3).tolist()}", secs)
    assert ok


def _brute_krum(U, f):
    n = len(U)
    scores = [math.fsum(sorted(float(np.sum((U[i] - U[j]) ** 2)) for j in range(n) if j != i)[: n - f - 2])
              for i in range(n)]
    return U[int(np.argmin(scores))]


def _brute_coord(U, fn):
    return np.array([fn(sorted(U[:, j])) for j in range(U.shape[1])])


def test_criterion_8_aggregator_suite(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(200):
        f = int(rng.integers(0, 3))
        U = rng.normal(size=(int(rng.integers(2 * f + 3, 2 * f + 10)), 4))
        bad += not np.array_equal(krum(U, f), _brute_krum(U, f))
    for _ in range(200):
        n = int(rng.integers(1, 12))
        U = rng.normal(size=(n, 4))
        med = _brute_coord(U, lambda c: c[n // 2] if n % 2 else 0.5 * (c[n // 2 - 1] + c[n // 2]))
        bad += not np.array_equal(aggregate_median(U), med)
    for _ in range(200):
        n = int(rng.integers(3, 12))
        beta = float(rng.uniform(0, 0.49))
        k = int(math.floor(beta * n))
        U = rng.normal(size=(n, 4))
        tm = _brute_coord(U, lambda c: math.fsum(c[k:n - k]) / (n - 2 * k))
        bad += not np.allclose(aggregate_trimmed_mean(U, beta), tm, rtol=0, atol=1e-12)
    benign = rng.normal(size=(9, 4))
    outlier = rng.normal(size=4)
    U = np.vstack([benign, outlier * 1e6 / np.linalg.norm(outlier)])
    lo, hi = benign.min(axis=0), benign.max(axis=0)
    robust = all(np.all((a >= lo) & (a <= hi))
                 for a in (krum(U, 1), aggregate_median(U), aggregate_trimmed_mean(U, 0.1)))
    mean_breaks = not np.all((aggregate_mean(U) >= lo) & (aggregate_mean(U) <= hi))
    secs = time.perf_counter() - t0
    ok = bad == 0 and robust and mean_breaks and secs < 10
    report(8, ok, f"{600 - bad}/600 oracle matches, robust under 1e6 outlier: {robust}", secs)
    assert ok


REPRO_CONFIG = """
seed = 11
[env]
horizon = 6
[meta]
N_D = 4
N_A = 2
N_b = 8
eta = 0.05
mode = "full"
[diagnostics]
cadence = 2
n_b = 8
replicates = 2
[[prior.types]]
id = 0
category = "untargeted"
m2 = 4
behavior = "adaptive"
prob = 0.5
[[prior.types]]
id = 1
category = "backdoor"
m1 = 3
behavior = "eb"
trigger = [1.5, 0, 0, 0, 0, 0, 0, 0, 0, 0]
target_label = 0
params = { boost = 2.0 }
prob = 0.5
"""


def test_criterion_9_reproducibility(report, tmp_path):
    t0 = time.perf_counter()
    (tmp_path / "run.toml").write_text(REPRO_CONFIG)
    for out in ("a", "b"):
        assert cli.main(["pretrain", "--config", str(tmp_path / "run.toml"), "--out", str(tmp_path / out)]) == 0
    names = ("metrics.csv", "checkpoint_final.json", "attacker_0.json")
    same = {n: (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names}
    secs = time.perf_counter() - t0
    ok = all(same.values())
    report(9, ok, f"byte-identical: {same}", secs)
    assert ok
