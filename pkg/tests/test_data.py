import gzip
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metastack.data import (Dataset, GlobalModel, SyntheticSpec, class_means, eval_accuracy, eval_backdoor_metrics,
                            eval_loss, load_idx_dataset, make_synthetic_dataset, make_synthetic_task, read_idx)


def _random_data(rng, n=40, d=4, C=3):
    return Dataset(rng.normal(size=(n, d)), rng.integers(0, C, n), C)


class TestSynthetic:
    def test_zero_spread_hits_means(self):
        spec = SyntheticSpec(d=6, C=3, per_class=20, cluster_spread=0.0)
        task = make_synthetic_task(spec, 6, np.random.default_rng(0))
        for client in task.clients:
            assert np.array_equal(client.X, task.means[client.y])

    def test_class_means_unit_separation(self):
        for d, C in [(10, 3), (4, 4), (2, 5)]:
            m = class_means(d, C, np.random.default_rng(1))
            dist = np.linalg.norm(m[:, None] - m[None], axis=-1)[np.triu_indices(C, 1)]
            assert dist.min() == pytest.approx(1.0, abs=1e-12)

    def test_iid_histograms_within_multinomial_3_sigma(self):
        spec = SyntheticSpec(d=10, C=3, per_class=400)
        clients = make_synthetic_dataset(spec, np.random.default_rng(0), n_clients=10)
        for c in clients:
            n = len(c)
            p = 1.0 / 3
            sd = math.sqrt(n * p * (1 - p))
            assert np.all(np.abs(c.label_histogram() - n * p) <= 3 * sd)

    def test_iid_histogram_z_scores_are_standard(self):
        zs = []
        for seed in range(40):
            for c in make_synthetic_dataset(SyntheticSpec(per_class=400), np.random.default_rng(seed), 10):
                n = len(c)
                zs.extend((c.label_histogram() - n / 3) / math.sqrt(n * 2 / 9))
        zs = np.array(zs)
        assert abs(zs.mean()) < 0.1
        # the finite pool makes the spread slightly sub-multinomial
        assert 0.85 < zs.std() < 1.05

    def test_full_heterogeneity_gives_single_label_groups(self):
        spec = SyntheticSpec(C=3, heterogeneity=1.0)
        task = make_synthetic_task(spec, 9, np.random.default_rng(3))
        for i, c in enumerate(task.clients):
            assert set(np.unique(c.y)) == {i % 3}

    def test_determinism(self):
        spec = SyntheticSpec()
        a = make_synthetic_task(spec, 10, np.random.default_rng(4))
        b = make_synthetic_task(spec, 10, np.random.default_rng(4))
        for x, y in zip(a.clients + (a.eval, a.root), b.clients + (b.eval, b.root)):
            assert x.X.tobytes() == y.X.tobytes() and x.y.tobytes() == y.y.tobytes()

    def test_bad_heterogeneity(self):
        with pytest.raises(ValueError, match="heterogeneity"):
            SyntheticSpec(C=3, heterogeneity=0.1)

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="no samples"):
            make_synthetic_task(SyntheticSpec(per_class=1), 20, np.random.default_rng(0))


class TestLoss:
    def test_uniform_logits(self, rng):
        data = _random_data(rng, C=10)
        assert eval_loss(GlobalModel.zeros(4, 10), data) == pytest.approx(math.log(10), abs=1e-12)

    def test_margin_40_is_near_zero(self):
        data = Dataset(np.zeros((1, 2)), np.array([1]), 3)
        params = np.zeros((3, 3))
        params[1, -1] = 40.0
        assert eval_loss(GlobalModel(params.ravel(), 2, 3), data) < 1e-6

    @given(st.integers(0, 2**31 - 1))
    def test_permutation_sum_oracle(self, seed):
        rng = np.random.default_rng(seed)
        data = _random_data(rng)
        model = GlobalModel(rng.normal(size=3 * 5), 4, 3)
        W = model.weights()
        per = []
        for i in rng.permutation(len(data)):
            z = W[:, :-1] @ data.X[i] + W[:, -1]
            m = z.max()
            per.append(m + math.log(np.exp(z - m).sum()) - z[data.y[i]])
        assert eval_loss(model, data) == pytest.approx(math.fsum(per) / len(per), abs=1e-10)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="does not match"):
            eval_loss(GlobalModel.zeros(3, 3), _random_data(rng))

    def test_accuracy_of_perfect_model(self):
        X = np.eye(3)
        model = GlobalModel(np.hstack([10 * np.eye(3), np.zeros((3, 1))]).ravel(), 3, 3)
        assert eval_accuracy(model, Dataset(X, np.arange(3), 3)) == 1.0


class TestBackdoorMetrics:
    def _poisoned(self, target):
        X = np.random.default_rng(0).normal(size=(20, 2))
        return Dataset(X, np.full(20, target), 3, target_label=target)

    def test_constant_target_predictor(self):
        params = np.zeros((3, 3))
        params[2, -1] = 5.0
        out = eval_backdoor_metrics(GlobalModel(params.ravel(), 2, 3), self._poisoned(2))
        assert out["backdoor_accuracy"] == 1.0

    def test_never_target(self):
        params = np.zeros((3, 3))
        params[0, -1] = 5.0
        out = eval_backdoor_metrics(GlobalModel(params.ravel(), 2, 3), self._poisoned(2))
        assert out["backdoor_accuracy"] == 0.0

    def test_zero_model_tie_break_lowest_index(self):
        out = eval_backdoor_metrics(GlobalModel.zeros(2, 3), self._poisoned(0))
        assert out["backdoor_accuracy"] == 1.0
        assert out["loss"] == pytest.approx(math.log(3))

    def test_requires_target(self, rng):
        with pytest.raises(ValueError, match="no backdoor target"):
            eval_backdoor_metrics(GlobalModel.zeros(4, 3), _random_data(rng))


def _write_idx(path, arr, code):
    header = struct.pack(">BBBB", 0, 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    path.write_bytes(header + arr.astype(arr.dtype.newbyteorder(">")).tobytes())


class TestIDX:
    def test_round_trip_and_pooling(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(30, 8, 8)).astype(np.uint8)
        labels = (np.arange(30) % 3).astype(np.uint8)
        _write_idx(tmp_path / "img.idx", imgs, 0x08)
        _write_idx(tmp_path / "lab.idx", labels, 0x08)
        assert np.array_equal(read_idx(tmp_path / "img.idx"), imgs)
        data = load_idx_dataset(tmp_path / "img.idx", tmp_path / "lab.idx", d=4)
        assert data.X.shape == (30, 4)
        assert data.n_classes == 3
        expected = imgs[:, :4, :4].mean(axis=(1, 2)) / 255.0
        assert np.allclose(data.X[:, 0], expected)

    def test_gzip(self, tmp_path):
        arr = np.arange(6, dtype=np.uint8)
        _write_idx(tmp_path / "a.idx", arr, 0x08)
        (tmp_path / "a.idx.gz").write_bytes(gzip.compress((tmp_path / "a.idx").read_bytes()))
        assert np.array_equal(read_idx(tmp_path / "a.idx.gz"), arr)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"\x01\x02\x08\x01\x00\x00\x00\x01\x00")
        with pytest.raises(ValueError, match="magic"):
            read_idx(tmp_path / "bad")
