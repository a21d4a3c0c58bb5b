import struct

import numpy as np
import pytest

from fedep.datahub import (
    Dataset,
    GroupSpec,
    Partition,
    PartitionSpec,
    apportion,
    dirichlet_partition,
    dirichlet_variance,
    load_idx_dataset,
    make_synthetic,
    sample_proportions,
    split_local_test,
    write_idx_images,
    write_idx_labels,
)
from fedep.errors import ConsistencyError, FormatError, PartitionError
from fedep.numkit import Rng


def _write_pair(tmp_path, images, labels):
    img_path = tmp_path / "images.idx"
    lbl_path = tmp_path / "labels.idx"
    write_idx_images(img_path, images)
    write_idx_labels(lbl_path, labels)
    return img_path, lbl_path


class TestIdxFormat:
    def test_roundtrip(self, tmp_path):
        rng = Rng(0)
        images = (rng.uniform((12, 4, 3)) * 255).astype(np.uint8)
        labels = np.arange(12, dtype=np.uint8) % 3
        img_path, lbl_path = _write_pair(tmp_path, images, labels)
        ds = load_idx_dataset(img_path, lbl_path)
        assert len(ds) == 12
        assert ds.n_features == 12
        assert ds.n_classes == 3
        assert np.allclose(ds.features * 255.0, images.reshape(12, -1))

    def test_wrong_magic_named_in_error(self, tmp_path):
        img_path, lbl_path = _write_pair(
            tmp_path, np.zeros((2, 2, 2), np.uint8), np.zeros(2, np.uint8)
        )
        # Pass the image file where labels are expected: magic 0x803 is wrong.
        with pytest.raises(FormatError, match="0x00000803"):
            load_idx_dataset(img_path, img_path)

    def test_truncated_payload_fails_closed(self, tmp_path):
        img_path, lbl_path = _write_pair(
            tmp_path, np.zeros((4, 3, 3), np.uint8), np.zeros(4, np.uint8)
        )
        blob = img_path.read_bytes()
        img_path.write_bytes(blob[:-5])
        with pytest.raises(FormatError, match="payload"):
            load_idx_dataset(img_path, lbl_path)

    def test_count_mismatch(self, tmp_path):
        img_path, _ = _write_pair(tmp_path, np.zeros((4, 2, 2), np.uint8), np.zeros(4, np.uint8))
        lbl_path = tmp_path / "short.idx"
        write_idx_labels(lbl_path, np.zeros(3, np.uint8))
        with pytest.raises(ConsistencyError):
            load_idx_dataset(img_path, lbl_path)

    def test_header_too_short(self, tmp_path):
        p = tmp_path / "stub.idx"
        p.write_bytes(struct.pack(">I", 0x00000803))
        with pytest.raises(FormatError):
            load_idx_dataset(p, p)


class TestSynthetic:
    def test_uniform_histogram(self):
        ds = make_synthetic(Rng(0), n_classes=10, n_per_class=100, n_features=20,
                            cluster_spread=0.1)
        assert np.array_equal(np.bincount(ds.labels), np.full(10, 100))

    def test_deterministic(self):
        a = make_synthetic(Rng(5), 4, 50, 10, 0.2)
        b = make_synthetic(Rng(5), 4, 50, 10, 0.2)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_zero_spread_separable(self):
        ds = make_synthetic(Rng(1), 3, 20, 9, 0.0)
        # Identical rows within a class, distinct centers across classes.
        for c in range(3):
            rows = ds.features[ds.labels == c]
            assert np.all(rows == rows[0])
        assert not np.array_equal(ds.features[0], ds.features[20])

    def test_bad_spread_rejected(self):
        with pytest.raises(ValueError):
            make_synthetic(Rng(0), 3, 10, 5, float("nan"))

    def test_features_in_unit_box(self):
        ds = make_synthetic(Rng(2), 5, 40, 8, 2.0)
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0


class TestApportion:
    def test_conserves_total(self):
        rng = Rng(0)
        for _ in range(100):
            weights = rng.uniform(6) + 1e-9
            total = int(rng.integers(0, 500))
            counts = apportion(total, weights)
            assert counts.sum() == total
            assert np.all(counts >= 0)

    def test_exact_proportions(self):
        assert np.array_equal(apportion(10, [0.5, 0.3, 0.2]), [5, 3, 2])


class TestDirichletVariance:
    def test_uniform_on_simplex(self):
        assert dirichlet_variance(1.0, 2) == pytest.approx(1.0 / 12.0)

    def test_large_alpha_limit(self):
        assert dirichlet_variance(1e9, 10) < 1e-9

    def test_closed_form_value(self):
        # k=10, alpha=0.1: (k-1) / (k^2 (k alpha + 1)) = 9 / 200
        assert dirichlet_variance(0.1, 10) == pytest.approx(0.045)

    def test_monte_carlo_agreement(self):
        rng = Rng(17)
        for alpha in (0.1, 1.0, 20.0):
            draws = np.stack([sample_proportions(rng, alpha, 10) for _ in range(10_000)])
            empirical = draws.var()
            expected = dirichlet_variance(alpha, 10)
            assert abs(empirical - expected) / expected < 0.1

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            dirichlet_variance(0.0, 5)
        with pytest.raises(ValueError):
            dirichlet_variance(1.0, 1)


class TestPartitionSpec:
    def test_fraction_sum_enforced(self):
        with pytest.raises(ValueError):
            PartitionSpec(4, [GroupSpec(0.5, 1.0), GroupSpec(0.4, 1.0)])

    def test_node_alphas_mixed(self):
        spec = PartitionSpec(10, [GroupSpec(0.5, 50.0), GroupSpec(0.5, 0.1)])
        alphas = spec.node_alphas()
        assert np.all(alphas[:5] == 50.0) and np.all(alphas[5:] == 0.1)


class TestDirichletPartition:
    def _dataset(self, n_classes=10, n_per_class=60):
        return make_synthetic(Rng(100), n_classes, n_per_class, 5, 0.2)

    def test_exact_set_partition(self):
        ds = self._dataset()
        part = dirichlet_partition(Rng(0), ds, PartitionSpec.pure(10, 0.5))
        merged = np.sort(np.concatenate(part.assignments))
        assert np.array_equal(merged, np.arange(len(ds)))
        assert all(len(a) > 0 for a in part.assignments)

    def test_sizes_sum_to_dataset(self):
        ds = self._dataset(4, 33)
        for alpha in (0.1, 5.0):
            part = dirichlet_partition(Rng(3), ds, PartitionSpec.pure(7, alpha))
            assert sum(part.sizes()) == len(ds)

    def test_deterministic(self):
        ds = self._dataset()
        spec = PartitionSpec.pure(6, 0.2)
        a = dirichlet_partition(Rng(9), ds, spec)
        b = dirichlet_partition(Rng(9), ds, spec)
        assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))

    def test_huge_alpha_near_uniform(self):
        ds = self._dataset(10, 100)
        part = dirichlet_partition(Rng(4), ds, PartitionSpec.pure(10, 1e6))
        for a in part.assignments:
            hist = np.bincount(ds.labels[a], minlength=10) / len(a)
            tv = 0.5 * np.abs(hist - 0.1).sum()
            assert tv < 0.02

    def test_heterogeneity_ordering(self):
        # Small alpha concentrates each node on few classes; compare the mean
        # max-class share across many seeded partitions.
        ds = self._dataset(10, 40)

        def mean_max_share(alpha):
            shares = []
            for seed in range(100):
                part = dirichlet_partition(Rng(seed, "het"), ds, PartitionSpec.pure(10, alpha))
                for a in part.assignments:
                    hist = np.bincount(ds.labels[a], minlength=10) / len(a)
                    shares.append(hist.max())
            return np.mean(shares)

        assert mean_max_share(0.1) > mean_max_share(20.0)

    def test_mixed_groups_entropy_ordering(self):
        ds = self._dataset(10, 40)
        spec = PartitionSpec(10, [GroupSpec(0.5, 50.0), GroupSpec(0.5, 0.1)])
        uniform_entropy = np.log(10.0)
        deficits_g1, deficits_g2 = [], []
        for seed in range(50):
            part = dirichlet_partition(Rng(seed, "mix"), ds, spec)
            for i, a in enumerate(part.assignments):
                hist = np.bincount(ds.labels[a], minlength=10) / len(a)
                nz = hist[hist > 0]
                entropy = -(nz * np.log(nz)).sum()
                (deficits_g1 if i < 5 else deficits_g2).append(uniform_entropy - entropy)
        assert np.mean(deficits_g2) > np.mean(deficits_g1)

    def test_too_few_samples(self):
        ds = Dataset(np.zeros((3, 2)), np.array([0, 1, 1]), 2)
        with pytest.raises(PartitionError):
            dirichlet_partition(Rng(0), ds, PartitionSpec.pure(4, 1.0))

    def test_json_roundtrip(self):
        ds = self._dataset(4, 25)
        part = dirichlet_partition(Rng(2), ds, PartitionSpec.pure(5, 0.7))
        restored = Partition.from_json(part.to_json())
        assert all(np.array_equal(x, y) for x, y in zip(part.assignments, restored.assignments))


class TestSplitLocalTest:
    def test_disjoint_and_proportional(self):
        ds = make_synthetic(Rng(8), 5, 100, 4, 0.2)
        part = dirichlet_partition(Rng(1), ds, PartitionSpec.pure(5, 1.0))
        train, test = split_local_test(part.assignments, ds.labels, 0.2)
        for node, tr, te in zip(part.assignments, train, test):
            assert set(tr) | set(te) == set(node)
            assert not set(tr) & set(te)
            assert len(te) == pytest.approx(0.2 * len(node), abs=1.5)
            # Test proportions should stay close to the node's own mix.
            node_hist = np.bincount(ds.labels[node], minlength=5) / len(node)
            test_hist = np.bincount(ds.labels[te], minlength=5) / len(te)
            assert 0.5 * np.abs(node_hist - test_hist).sum() < 0.15

    def test_tiny_node_degenerates_to_overlap(self):
        labels = np.array([0, 1, 1])
        train, test = split_local_test([np.array([0]), np.array([1, 2])], labels, 0.2)
        assert np.array_equal(train[0], test[0])
