import hashlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metastack.attacks import (AttackAction, AttackBox, LMPSearch, apply_attack_action, backdoor_poison,
                               eb_update, ipm_update, lmp_accepts, lmp_search, lmp_update, load_trigger,
                               save_trigger)
from metastack.data import Dataset

vectors = arrays(np.float64, st.integers(2, 6), elements=st.floats(-5, 5))


class TestIPM:
    def test_eps_one_is_negated_mean(self, rng):
        U = rng.normal(size=(5, 3))
        assert np.allclose(ipm_update(U, 1.0), -U.mean(axis=0))

    def test_eps_zero(self, rng):
        assert np.all(ipm_update(rng.normal(size=(4, 3)), 0.0) == 0)

    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 50))
    def test_antiparallel(self, seed, eps):
        U = np.random.default_rng(seed).normal(size=(4, 5)) + 0.5
        out, m = ipm_update(U, eps), U.mean(axis=0)
        cos = out @ m / (np.linalg.norm(out) * np.linalg.norm(m))
        assert cos == pytest.approx(-1.0, abs=1e-12)

    def test_inner_product_flips_with_eps(self):
        # 5 clients, M = 1 malicious: the aggregate keeps its direction while eps < n/M - 1 = 4
        benign = np.random.default_rng(0).normal(loc=1.0, size=(4, 3))
        m = benign.mean(axis=0)
        for eps, sign in [(2.0, 1), (3.9, 1), (4.1, -1), (20.0, -1)]:
            allu = np.vstack([benign, ipm_update(benign, eps)])
            assert np.sign(allu.mean(axis=0) @ m) == sign

    def test_needs_benign(self):
        with pytest.raises(ValueError):
            ipm_update(np.zeros((0, 3)), 1.0)


class TestEB:
    def test_boost_zero(self, rng):
        assert np.all(eb_update(rng.normal(size=4), 0.0) == 0)

    def test_identity(self, rng):
        g = rng.normal(size=4)
        assert np.array_equal(eb_update(g, 1.0), g)

    @given(vectors, st.floats(0, 100))
    def test_homogeneous(self, g, boost):
        assert np.linalg.norm(eb_update(g, boost)) == pytest.approx(boost * np.linalg.norm(g), rel=1e-12, abs=1e-12)

    def test_negative_boost(self):
        with pytest.raises(ValueError):
            eb_update(np.ones(2), -1.0)


class TestLMP:
    def test_single_update_mean_by_hand(self):
        u = np.array([[2.0]])
        out, lam, ok = lmp_search(u, "mean", LMPSearch(lambda0=10.0))
        # base = -sign(2) * |2| / sqrt(1) = -2; the first lambda already reverses the mean
        assert ok and lam == 10.0
        assert out[0] == pytest.approx(-20.0)

    def test_zero_benign(self):
        out, _, ok = lmp_search(np.zeros((4, 3)), "median")
        assert np.all(out == 0) and not ok

    def test_krum_selection_changes(self):
        # six clients, the last two colluding; benign spread is large relative to the mean
        honest = np.random.default_rng(0).normal(loc=[0.3, 0.2], scale=1.0, size=(6, 2))
        cfg = LMPSearch(krum_f=1, n_copies=2)
        crafted, _, ok = lmp_search(honest[:4], "krum", cfg)
        assert ok
        f = 1

        def brute_krum(V):
            best, best_score = None, math.inf
            for i in range(len(V)):
                d = sorted(float(np.sum((V[i] - V[j]) ** 2)) for j in range(len(V)) if j != i)
                score = sum(d[: len(V) - f - 2])
                if score < best_score:
                    best, best_score = i, score
            return V[best]

        clean_pick = brute_krum(honest)
        attacked_pick = brute_krum(np.vstack([honest[:4], crafted, crafted]))
        assert np.array_equal(attacked_pick, crafted)
        assert not np.allclose(attacked_pick, clean_pick)

    @given(st.integers(0, 2**31 - 1), st.sampled_from(["mean", "median", "trimmed_mean", "krum"]))
    def test_lambda_star_is_the_largest_accepted(self, seed, agg):
        rng = np.random.default_rng(seed)
        benign = rng.normal(loc=0.5, size=(6, 3))
        cfg = LMPSearch(lambda0=8.0, krum_f=1)
        crafted, lam, ok = lmp_search(benign, agg, cfg)
        if not ok:
            return
        m = benign.mean(axis=0)
        base = -np.sign(m) * np.linalg.norm(m) / math.sqrt(m.size)
        assert np.allclose(crafted, lam * base)
        assert lmp_accepts(benign, lam * base, agg, cfg)
        assert lam == cfg.lambda0 or not lmp_accepts(benign, 2 * lam * base, agg, cfg)

    def test_unknown_aggregator(self):
        with pytest.raises(ValueError, match="does not support"):
            lmp_update(np.ones((3, 2)), "fltrust")


class TestBackdoorPoison:
    def _data(self, n=10):
        rng = np.random.default_rng(0)
        return Dataset(rng.normal(size=(n, 3)), rng.integers(0, 3, n), 3)

    def test_full_fraction_zero_trigger(self):
        data = self._data()
        out = backdoor_poison(data, np.zeros(3), 2, 1.0, np.random.default_rng(0))
        assert np.array_equal(out.X, data.X)
        assert np.all(out.y == 2)

    def test_ceiling_count(self):
        out = backdoor_poison(self._data(10), np.ones(3), 1, 0.5, np.random.default_rng(0))
        assert out.poisoned_mask.sum() == 5
        out = backdoor_poison(self._data(10), np.ones(3), 1, 0.31, np.random.default_rng(0))
        assert out.poisoned_mask.sum() == 4

    def test_deterministic(self):
        a = backdoor_poison(self._data(), np.ones(3), 1, 0.3, np.random.default_rng(5))
        b = backdoor_poison(self._data(), np.ones(3), 1, 0.3, np.random.default_rng(5))
        assert a.X.tobytes() == b.X.tobytes() and np.array_equal(a.poisoned_mask, b.poisoned_mask)

    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 1.0))
    def test_unselected_untouched(self, seed, frac):
        data = self._data(25)
        out = backdoor_poison(data, np.full(3, 0.7), 0, frac, np.random.default_rng(seed))
        keep = ~out.poisoned_mask
        assert len(out) == len(data)
        digest = lambda X, y: hashlib.sha256(X.tobytes() + y.tobytes()).hexdigest()
        assert digest(out.X[keep], out.y[keep]) == digest(data.X[keep], data.y[keep])

    def test_clamped(self):
        data = self._data()
        out = backdoor_poison(data, np.full(3, 100.0), 0, 1.0, np.random.default_rng(0), clip_range=(-2.0, 2.0))
        assert out.X.max() <= 2.0

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            backdoor_poison(self._data(), np.ones(3), 0, 0.0, np.random.default_rng(0))

    def test_trigger_file_round_trip(self, tmp_path):
        save_trigger([0.5, -1.0, 2.0], tmp_path / "t.json")
        assert np.array_equal(load_trigger(tmp_path / "t.json"), [0.5, -1.0, 2.0])


class TestAdaptiveAction:
    def test_ipm_reduction(self, rng):
        m, g = rng.normal(size=5), rng.normal(size=5)
        out = apply_attack_action(AttackAction(1.0, -1.0, 0.0), m, g, rng)
        assert np.allclose(out, -m, atol=1e-15)

    def test_camouflage(self, rng):
        m, g = rng.normal(size=5), rng.normal(size=5)
        assert np.allclose(apply_attack_action(AttackAction(1.0, 1.0, 0.0), m, g, rng), m)

    def test_pure_noise_norm(self):
        dim, scale = 400, 0.05
        rng = np.random.default_rng(0)
        out = apply_attack_action(AttackAction(0.0, 0.3, scale), np.ones(dim), np.ones(dim), rng)
        assert np.linalg.norm(out) == pytest.approx(scale * math.sqrt(dim), rel=0.1)

    @given(st.integers(0, 2**31 - 1), st.floats(0, 10), st.floats(0, 3), st.floats(-1, 1))
    def test_homogeneous_in_boost(self, seed, boost, k, mix):
        rng = np.random.default_rng(seed)
        m, g = rng.normal(size=4), rng.normal(size=4)
        k = min(k, 10.0 / max(boost, 1e-9))
        a = apply_attack_action(AttackAction(boost, mix, 0.0), m, g, rng)
        b = apply_attack_action(AttackAction(k * boost, mix, 0.0), m, g, rng)
        assert np.allclose(b, k * a, atol=1e-10)

    def test_zero_mean_falls_back_to_own(self, rng):
        g = rng.normal(size=3)
        assert np.allclose(apply_attack_action(AttackAction(2.0, 0.5, 0.0), np.zeros(3), g, rng), 2 * g)

    def test_action_validation(self):
        with pytest.raises(ValueError):
            AttackAction(11.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            AttackAction(1.0, 1.5, 0.0)

    def test_box_squash_in_range(self, rng):
        out = AttackBox().squash(rng.normal(scale=10, size=(50, 3)))
        assert np.all((out[:, 0] >= 0) & (out[:, 0] <= 10))
        assert np.all(np.abs(out[:, 1]) <= 1)
        assert np.all((out[:, 2] >= 0) & (out[:, 2] <= 0.1))
