"""カーネル k-means コードブックの単体テスト"""
import numpy as np
import pytest

from codebook.kernel_kmeans import (
    assign_kernel,
    assign_kernel_batch,
    build_implicit_codebook,
    centroid_kernel,
    centroid_kernels,
    centroid_self_kernel,
    kernel_kmeans_fit,
    mean_codebook,
)
from codebook.kmeans import assign_explicit_batch, kmeans_fit
from geometry.kernels import gram, kernel_value
from handlers.error_handler import ConfigError, GeometryMismatchError
from models.data_models import ClusterOptions, Geometry, KernelSpec

EUC2 = Geometry(tag="euclidean", dims=2)
LINEAR2 = KernelSpec(geometry=EUC2, family="linear")


def _blobs(seed, per=15):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [8.0, 8.0], [-8.0, 8.0]])
    return np.vstack([c + 0.5 * rng.standard_normal((per, 2)) for c in centers])


def _codebook(points, labels, kernel=LINEAR2):
    labels = np.asarray(labels)
    return build_implicit_codebook(np.asarray(points, dtype=float), kernel, labels, int(labels.max()) + 1)


class TestKernelKmeansFit:
    """kernel_kmeans_fit関数のテスト"""

    def test_linear_matches_kmeans(self):
        points = _blobs(0)
        opts = ClusterOptions(seed=11)
        implicit = kernel_kmeans_fit(points, LINEAR2, 3, opts)
        explicit = kmeans_fit(points, 3, opts)
        np.testing.assert_array_equal(implicit.labels(), explicit.labels)

    def test_single_cluster(self):
        points = _blobs(1)
        cb = kernel_kmeans_fit(points, LINEAR2, 1, ClusterOptions())
        assert cb.m == 1
        assert cb.members[0].size == points.shape[0]

    def test_members_partition(self):
        cb = kernel_kmeans_fit(_blobs(2), KernelSpec(geometry=EUC2, family="rbf", sigma=2.0), 4, ClusterOptions(seed=1))
        joined = np.sort(np.concatenate(cb.members))
        np.testing.assert_array_equal(joined, np.arange(45))
        assert all(idx.size > 0 for idx in cb.members)

    def test_self_kernel_cache(self):
        k = KernelSpec(geometry=EUC2, family="rbf", sigma=1.5)
        cb = kernel_kmeans_fit(_blobs(3), k, 3, ClusterOptions(seed=2))
        for s in range(cb.m):
            expected = gram(cb.member_descriptors(s), k).values.mean()
            assert centroid_self_kernel(s, cb) == pytest.approx(expected, abs=1e-12)

    def test_deterministic(self):
        k = KernelSpec(geometry=EUC2, family="rbf", sigma=1.0)
        a = kernel_kmeans_fit(_blobs(4), k, 3, ClusterOptions(seed=9))
        b = kernel_kmeans_fit(_blobs(4), k, 3, ClusterOptions(seed=9))
        assert a.fingerprint == b.fingerprint
        np.testing.assert_array_equal(a.labels(), b.labels())

    def test_subsampling_cap(self):
        cb = kernel_kmeans_fit(_blobs(5), LINEAR2, 3, ClusterOptions(seed=0, max_samples=20))
        assert cb.training.shape[0] == 20

    def test_too_many_clusters(self):
        with pytest.raises(ConfigError):
            kernel_kmeans_fit(np.zeros((2, 2)) + [[0.0, 0.0], [1.0, 1.0]], LINEAR2, 3, ClusterOptions())

    def test_geometry_mismatch(self):
        with pytest.raises(GeometryMismatchError):
            kernel_kmeans_fit(np.zeros((5, 3)), LINEAR2, 2, ClusterOptions())

    def test_spd_scales_separate(self):
        rng = np.random.default_rng(0)
        spd = Geometry(tag="spd", dims=3)
        x, truth = [], []
        for label, scale in enumerate((1.0, 10.0)):
            for _ in range(12):
                e = 0.1 * rng.standard_normal((3, 3))
                x.append(scale * (np.eye(3) + e @ e.T))
                truth.append(label)
        k = KernelSpec(geometry=spd, family="stein", sigma=1.0)
        labels = kernel_kmeans_fit(np.stack(x), k, 2, ClusterOptions(seed=4)).labels()
        truth = np.asarray(truth)
        assert np.all(labels == truth) or np.all(labels != truth)


class TestCentroidKernels:
    """中心とのカーネル値のテスト"""

    def test_singleton(self):
        cb = _codebook([[1.0, 2.0], [3.0, -1.0]], [0, 1])
        x = np.array([0.5, 0.5])
        assert centroid_kernel(x, 0, cb) == pytest.approx(kernel_value(x, [1.0, 2.0], LINEAR2))
        assert centroid_self_kernel(1, cb) == pytest.approx(10.0)

    def test_mean_of_members(self):
        # k(x, t1) = 0.2, k(x, t2) = 0.6
        cb = _codebook([[0.2, 0.0], [0.6, 0.0]], [0, 0])
        assert centroid_kernel(np.array([1.0, 0.0]), 0, cb) == pytest.approx(0.4)

    def test_batch_matches_single(self):
        cb = _codebook(_blobs(6), np.repeat([0, 1, 2], 15))
        x = np.array([[1.0, 1.0], [5.0, 7.0]])
        table = centroid_kernels(x, cb)
        assert table[1, 2] == pytest.approx(centroid_kernel(x[1], 2, cb))

    def test_out_of_range(self):
        cb = _codebook([[1.0, 0.0]], [0])
        with pytest.raises(IndexError):
            centroid_kernel(np.array([1.0, 0.0]), 1, cb)


class TestAssignKernel:
    """assign_kernel関数のテスト"""

    def test_member_of_singleton(self):
        rbf = KernelSpec(geometry=EUC2, family="rbf", sigma=1.0)
        cb = _codebook([[0.0, 0.0], [5.0, 5.0]], [0, 1], rbf)
        assert assign_kernel(np.array([5.0, 5.0]), cb) == 1

    def test_tie_goes_to_lower_index(self):
        points = [[10.0, 10.0], [1.0, 0.0], [-10.0, -10.0], [-1.0, 0.0]]
        cb = _codebook(points, [0, 1, 2, 3])
        assert assign_kernel(np.array([0.0, 0.0]), cb) == 1

    def test_linear_matches_explicit(self):
        cb = _codebook(_blobs(7), np.repeat([0, 1, 2], 15))
        x = np.random.default_rng(8).uniform(-10, 10, size=(40, 2))
        np.testing.assert_array_equal(assign_kernel_batch(x, cb), assign_explicit_batch(x, mean_codebook(cb)))

    def test_mean_codebook_requires_euclidean(self):
        spd = Geometry(tag="spd", dims=2)
        cb = build_implicit_codebook(np.stack([np.eye(2), 2 * np.eye(2)]), KernelSpec(geometry=spd, family="stein", sigma=1.0), np.array([0, 1]), 2)
        with pytest.raises(GeometryMismatchError):
            mean_codebook(cb)


def _non_increasing(history):
    history = np.asarray(history)
    return np.all(np.diff(history) <= 1e-12 * np.maximum(1.0, history[:-1]))


class TestKernelKmeansDistortion:
    """カーネル k-means の歪みの単調性のテスト"""

    def test_rbf_non_increasing(self):
        rng = np.random.default_rng(8)
        k = KernelSpec(geometry=EUC2, family="rbf", sigma=1.5)
        cb = kernel_kmeans_fit(rng.standard_normal((120, 2)) * 3.0, k, 6, ClusterOptions(seed=2, rel_tol=0.0))
        assert len(cb.distortions) >= 2
        assert _non_increasing(cb.distortions)

    def test_stein_non_increasing(self):
        rng = np.random.default_rng(9)
        spd = Geometry(tag="spd", dims=3)
        x = []
        for _ in range(40):
            g = rng.standard_normal((3, 3))
            x.append(g @ g.T + 3.0 * np.eye(3))
        k = KernelSpec(geometry=spd, family="stein", sigma=1.0)
        cb = kernel_kmeans_fit(np.stack(x), k, 4, ClusterOptions(seed=5, rel_tol=0.0))
        assert len(cb.distortions) >= 2
        assert _non_increasing(cb.distortions)
