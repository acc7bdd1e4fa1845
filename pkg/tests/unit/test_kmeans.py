"""k-means コードブックの単体テスト"""
import logging

import numpy as np
import pytest

from codebook.kmeans import _refill_empty, assign_explicit, assign_explicit_batch, kmeans_fit, lloyd
from handlers.error_handler import ConfigError, DimensionMismatchError, DistortionIncreaseError
from models.data_models import ClusterOptions, ExplicitCodebook


def _blobs(seed, per=20, d=2):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0] * d, [10.0] * d, [-10.0] + [10.0] * (d - 1)])
    return np.vstack([c + 0.3 * rng.standard_normal((per, d)) for c in centers])


class TestKmeansFit:
    """kmeans_fit関数のテスト"""

    def test_two_clusters_exact_means(self):
        points = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
        cb = kmeans_fit(points, 2, ClusterOptions(seed=3))
        centers = sorted(map(tuple, np.round(cb.centers, 12)))
        assert centers == [(0.05, 0.0), (10.05, 10.0)]

    def test_m_equals_n(self):
        points = np.array([[0.0], [1.0], [5.0]])
        cb = kmeans_fit(points, 3, ClusterOptions(seed=0))
        assert cb.distortions[-1] == 0.0
        np.testing.assert_array_equal(np.sort(cb.centers[:, 0]), [0.0, 1.0, 5.0])

    def test_deterministic(self):
        points = _blobs(0)
        a = kmeans_fit(points, 3, ClusterOptions(seed=42))
        b = kmeans_fit(points, 3, ClusterOptions(seed=42))
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_distortion_non_increasing(self):
        rng = np.random.default_rng(1)
        points = rng.standard_normal((200, 3))
        cb = kmeans_fit(points, 8, ClusterOptions(seed=5, rel_tol=0.0))
        history = np.asarray(cb.distortions)
        assert np.all(np.diff(history) <= 1e-9 * history[:-1])

    def test_no_empty_clusters(self):
        rng = np.random.default_rng(2)
        cb = kmeans_fit(rng.standard_normal((50, 2)), 10, ClusterOptions(seed=0))
        assert np.bincount(cb.labels, minlength=10).min() > 0

    def test_restarts_keep_best(self):
        points = _blobs(3)
        single = kmeans_fit(points, 3, ClusterOptions(seed=7))
        multi = kmeans_fit(points, 3, ClusterOptions(seed=7, restarts=4))
        assert multi.distortions[-1] <= single.distortions[-1]

    def test_too_many_clusters(self):
        with pytest.raises(ConfigError):
            kmeans_fit(np.array([[1.0], [1.0], [2.0]]), 3, ClusterOptions())

    def test_fingerprint_recorded(self):
        cb = kmeans_fit(_blobs(4), 3, ClusterOptions(), fingerprint=99)
        assert cb.fingerprint == 99


class TestRefillEmpty:
    """空クラスタ補充のテスト"""

    def test_moves_farthest_point(self, caplog):
        labels = np.array([0, 0, 0])
        dist = np.array([[0.0, 5.0], [4.0, 5.0], [1.0, 5.0]])
        with caplog.at_level(logging.WARNING, logger="codebook.kmeans"):
            out = _refill_empty(labels, dist, 2)
        np.testing.assert_array_equal(out, [0, 1, 0])
        assert "空のクラスタ" in caplog.text


class TestAssignExplicit:
    """assign_explicit関数のテスト"""

    def setup_method(self):
        self.cb = ExplicitCodebook(centers=[[0.0, 0.0], [1.0, 1.0], [10.0, 10.0]])

    def test_exact_center(self):
        assert assign_explicit([10.0, 10.0], self.cb) == 2

    def test_tie_goes_to_lower_index(self):
        assert assign_explicit([1.0, 0.0], self.cb) == 0

    def test_nearest(self):
        cb = ExplicitCodebook(centers=[[0.0, 0.0], [10.0, 10.0]])
        assert assign_explicit([9.0, 9.0], cb) == 1

    def test_batch(self):
        np.testing.assert_array_equal(assign_explicit_batch([[0.1, 0.0], [9.0, 9.0]], self.cb), [0, 2])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            assign_explicit([1.0, 2.0, 3.0], self.cb)


class TestLloyd:
    """lloyd関数のテスト"""

    def test_increasing_distortion_raises(self):
        base = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        calls = []

        def distances(labels):
            calls.append(labels.copy())
            return base + len(calls)

        with pytest.raises(DistortionIncreaseError) as exc_info:
            lloyd(4, 2, np.array([0, 1]), distances, ClusterOptions())
        assert (exc_info.value.previous, exc_info.value.current) == (4.0, 8.0)
        assert exc_info.value.iteration == 1
