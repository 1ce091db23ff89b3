import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metastack.diagnostics import (DiagnosticRecord, QuadraticStandIn, SampledObjectives, SCWarning, box_residual,
                                   fose_residual, grad_check_suite, lipschitz_probe, pl_probe, sc_check)
from metastack.game import AttackTypeSpec, TypePrior
from metastack.toy import ToyMDP

T0 = AttackTypeSpec(0, "untargeted", 0, 1, "adaptive")
T1 = AttackTypeSpec(1, "untargeted", 0, 1, "adaptive")
PRIOR = TypePrior(((T0, 0.25), (T1, 0.75)))


def _standin(coupling=0.0, s_D=1.0, s_A=1.0):
    a = {0: np.array([1.0, -1.0]), 1: np.array([1.0, -1.0])}
    b = {0: np.array([0.5, 0.0]), 1: np.array([-0.5, 2.0])}
    return QuadraticStandIn(a, b, s_D, s_A, coupling)


class TestFOSE:
    def test_stationary_point(self):
        game = _standin()
        rep = fose_residual(np.array([1.0, -1.0]), {0: np.array([0.5, 0.0]), 1: np.array([-0.5, 2.0])},
                            PRIOR, game)
        assert rep.defender < 1e-6
        assert all(v < 1e-6 for v in rep.per_type.values())

    def test_hand_computed_norms(self):
        game = _standin(coupling=0.5)
        theta = np.array([0.0, 0.0])
        phis = {0: np.array([1.0, 1.0]), 1: np.array([0.0, 0.0])}
        rep = fose_residual(theta, phis, PRIOR, game)
        # grad_D = -2 (theta - a) - c phi
        g0 = np.array([2.0, -2.0]) - 0.5 * np.array([1.0, 1.0])
        g1 = np.array([2.0, -2.0])
        assert rep.defender == pytest.approx(np.linalg.norm(0.25 * g0 + 0.75 * g1), abs=1e-12)
        # grad_A = -2 (phi - b) + c theta
        assert rep.per_type[0] == pytest.approx(np.linalg.norm([-1.0, -2.0]), abs=1e-12)
        assert rep.per_type[1] == pytest.approx(np.linalg.norm([-1.0, 4.0]), abs=1e-12)

    def test_reward_shift_invariance(self):
        theta_flat = np.array([0.3, -0.2, 0.5, 0.1])
        prior = TypePrior(((AttackTypeSpec(0, "untargeted", 0, 1, "ipm"), 1.0),))
        out = []
        for offset in (0.0, -3.0):
            toy = ToyMDP(offset=offset)
            obj = SampledObjectives(toy, eta=0.3, n_b=64, replicates=6, seed=2)
            out.append(fose_residual(toy.policy(theta_flat), {}, prior, obj))
        assert abs(out[0].defender - out[1].defender) <= 3 * math.hypot(out[0].defender_se, out[1].defender_se)

    def test_fresh_policy_positive(self):
        toy = ToyMDP()
        prior = TypePrior(((AttackTypeSpec(0, "untargeted", 0, 1, "ipm"), 1.0),))
        # the reptile estimator has far lower variance than the full one at large batches
        obj = SampledObjectives(toy, eta=0.1, n_b=1024, replicates=8, seed=0, mode="reptile")
        rep = fose_residual(toy.policy(np.array([0.3, -0.2, 0.5, 0.1])), {}, prior, obj)
        assert rep.defender > 10 * rep.defender_se

    def test_report_json(self):
        rep = fose_residual(np.zeros(2), {0: np.zeros(2), 1: np.zeros(2)}, PRIOR, _standin())
        doc = json.loads(json.dumps(rep.to_json()))
        assert set(doc["per_type"]) == {"0", "1"}


class TestBoxResidual:
    def test_interior_gradient(self):
        assert box_residual([1.0, -2.0], [0.0, 0.0], [-1, -1], [1, 1], radius=0.5) == pytest.approx(1.5)

    def test_stationary_on_boundary(self):
        # pushing out of the box is not a feasible ascent direction
        assert box_residual([1.0], [1.0], [-1.0], [1.0]) == 0.0

    def test_outside(self):
        with pytest.raises(ValueError):
            box_residual([1.0], [2.0], [-1.0], [1.0])


class TestSC:
    def test_untargeted_zero_sum(self, small_game, ipm_type):
        fit = sc_check(small_game, ipm_type, 200, np.random.default_rng(0))
        assert fit.c == pytest.approx(-1.0, abs=1e-8)
        assert abs(fit.d) <= 1e-8
        assert fit.max_abs_residual <= 1e-10

    def test_backdoor_lambda_one_warns(self, small_game):
        xi = AttackTypeSpec(7, "backdoor", 3, 0, "eb", trigger=[1.5] + [0.0] * 9, target_label=0,
                            lambda_mix=1.0, params={"boost": 2.0})
        with pytest.warns(SCWarning):
            fit = sc_check(small_game, xi, 60, np.random.default_rng(0))
        assert fit.c == pytest.approx(1.0, abs=1e-8)
        assert not fit.strictly_competitive

    def test_mixed_nonzero_residual(self, small_game, mixed_type):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SCWarning)
            fit = sc_check(small_game, mixed_type, 80, np.random.default_rng(1))
        assert fit.max_abs_residual > 1e-6

    def test_min_samples(self, small_game, ipm_type):
        with pytest.raises(ValueError, match="at least 10"):
            sc_check(small_game, ipm_type, 5, np.random.default_rng(0))


class TestPL:
    def test_ratio_two(self):
        game = QuadraticStandIn(np.zeros(3), np.zeros(3))
        rep = pl_probe(np.zeros(3), np.zeros(3), T0, game, 20, np.random.default_rng(0))
        assert rep.status == "ok"
        assert np.allclose(rep.ratios, 2.0, atol=1e-12)

    @given(st.floats(0.1, 10))
    def test_scale_covariance(self, k):
        base = pl_probe(np.zeros(2), np.zeros(2), T0, QuadraticStandIn(np.zeros(2), np.zeros(2)), 5,
                        np.random.default_rng(1))
        scaled = pl_probe(np.zeros(2), np.zeros(2), T0, QuadraticStandIn(np.zeros(2), np.zeros(2), s_A=k), 5,
                          np.random.default_rng(1))
        assert scaled.ratio == pytest.approx(k * base.ratio, rel=1e-10)

    def test_zero_perturbation_skipped(self):
        game = QuadraticStandIn(np.zeros(2), np.zeros(2))
        rep = pl_probe(np.zeros(2), np.zeros(2), T0, game, 4, np.random.default_rng(0), radius=0.0)
        assert rep.skipped == 4 and rep.ratio is None and rep.status == "PL unverified"

    def test_bad_maximiser_invalidated(self):
        game = QuadraticStandIn(np.zeros(2), np.zeros(2))
        rep = pl_probe(np.zeros(2), np.array([5.0, 5.0]), T0, game, 10, np.random.default_rng(0), radius=1.0)
        assert rep.invalidated > 0 and rep.status == "PL unverified"


class TestLipschitz:
    @pytest.mark.parametrize("fn_id", ["L11", "L22"])
    def test_hessian_2i(self, fn_id):
        game = QuadraticStandIn(np.zeros(4), np.zeros(4))
        val = lipschitz_probe(fn_id, np.zeros(4), np.zeros(4), T0, game, 10, np.random.default_rng(0))
        assert val == pytest.approx(2.0, abs=1e-9)

    def test_coupling_blocks(self):
        game = QuadraticStandIn(np.zeros(3), np.zeros(3), coupling=0.7)
        for fn_id in ("L12", "L21"):
            val = lipschitz_probe(fn_id, np.zeros(3), np.zeros(3), T0, game, 10, np.random.default_rng(0))
            assert val == pytest.approx(0.7, abs=1e-9)

    def test_value_gradient(self):
        game = QuadraticStandIn(np.zeros(2), np.zeros(2), coupling=1.0)
        val = lipschitz_probe("L_V", np.zeros(2), np.zeros(2), T0, game, 10, np.random.default_rng(0))
        assert val == pytest.approx(3.0, abs=1e-9)

    def test_identical_pairs_skipped(self):
        game = QuadraticStandIn(np.zeros(2), np.zeros(2))
        assert lipschitz_probe("L11", np.zeros(2), np.zeros(2), T0, game, 10, np.random.default_rng(0),
                               radius=0.0) == 0.0

    def test_monotone_in_pairs(self):
        toy = ToyMDP()
        obj = SampledObjectives(toy, eta=0.1, n_b=32, replicates=2)
        th = toy.policy(np.zeros(4))
        vals = [lipschitz_probe("L11", th, None, None, obj, n, np.random.default_rng(3)) for n in (2, 5, 10)]
        assert vals[0] <= vals[1] <= vals[2]

    def test_unknown_id(self):
        with pytest.raises(ValueError, match="unknown Lipschitz"):
            lipschitz_probe("L33", np.zeros(1), np.zeros(1), T0, _standin(), 10, np.random.default_rng(0))


class TestGradCheck:
    def test_deterministic_and_passes(self):
        a = grad_check_suite(seed=1, n_traj=20_000, n_meta=3000)
        b = grad_check_suite(seed=1, n_traj=20_000, n_meta=3000)
        assert a.to_json() == b.to_json()
        assert a.passed, a.table()
        assert "PASS" in a.table()


class TestRecord:
    def test_negative_residual(self):
        with pytest.raises(ValueError):
            DiagnosticRecord(0, -1.0)

    def test_attacker_max(self):
        assert DiagnosticRecord(0, 1.0, {1: 0.5, 2: 0.7}).attacker_residual_max == 0.7
