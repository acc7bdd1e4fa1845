"""Nyström 写像の単体テスト"""
import logging

import numpy as np
import pytest

from encoders.nystrom import landmark_count, nystrom_fit, nystrom_map, nystrom_map_batch, select_landmarks
from geometry.kernels import gram
from handlers.error_handler import ConfigError, DegenerateKernelError, GeometryMismatchError
from models.data_models import Geometry, KernelSpec

EUC3 = Geometry(tag="euclidean", dims=3)
LINEAR3 = KernelSpec(geometry=EUC3, family="linear")


class TestLandmarks:
    """ランドマーク選択のテスト"""

    @pytest.mark.parametrize("total, r, expected", [
        (1000, 10, 256),
        (100, 10, 100),
        (10000, 100, 400),
    ])
    def test_landmark_count(self, total, r, expected):
        assert landmark_count(total, r) == expected

    def test_all_when_small(self):
        np.testing.assert_array_equal(select_landmarks(np.zeros((50, 3)), 10, seed=0), np.arange(50))

    def test_sorted_unique_and_deterministic(self):
        x = np.zeros((1000, 3))
        a = select_landmarks(x, 10, seed=5)
        assert a.size == 256
        assert np.all(np.diff(a) > 0)
        np.testing.assert_array_equal(a, select_landmarks(x, 10, seed=5))


class TestNystromFit:
    """nystrom_fit関数のテスト"""

    def setup_method(self):
        self.landmarks = np.random.default_rng(0).standard_normal((10, 3))

    def test_linear_reproduces_inner_products(self):
        nmap = nystrom_fit(self.landmarks, LINEAR3, 3)
        x = np.random.default_rng(1).standard_normal((5, 3))
        z = nystrom_map_batch(x, nmap)
        np.testing.assert_allclose(z @ z.T, x @ x.T, rtol=1e-8, atol=1e-8)

    def test_rbf_exact_on_landmarks(self):
        k = KernelSpec(geometry=EUC3, family="rbf", sigma=2.0)
        nmap = nystrom_fit(self.landmarks[:6], k, 6, eig_floor=0.0)
        z = nystrom_map_batch(self.landmarks[:6], nmap)
        np.testing.assert_allclose(z @ z.T, gram(self.landmarks[:6], k).values, atol=1e-8)

    def test_eigenvalues_descending(self):
        nmap = nystrom_fit(self.landmarks, KernelSpec(geometry=EUC3, family="rbf", sigma=1.0), 4)
        assert nmap.eigenvalues.shape == (10,)
        assert np.all(np.diff(nmap.eigenvalues) <= 0.0)
        assert nmap.r == 4

    def test_floor_reduces_dimension(self, caplog):
        with caplog.at_level(logging.WARNING, logger="encoders.nystrom"):
            nmap = nystrom_fit(self.landmarks, LINEAR3, 5)
        assert nmap.r == 3
        assert "縮小" in caplog.text

    @pytest.mark.parametrize("r", [0, 11])
    def test_r_out_of_range(self, r):
        with pytest.raises(ConfigError):
            nystrom_fit(self.landmarks, LINEAR3, r)

    def test_degenerate(self):
        with pytest.raises(DegenerateKernelError):
            nystrom_fit(np.zeros((4, 3)), LINEAR3, 1)

    def test_geometry_mismatch(self):
        with pytest.raises(GeometryMismatchError):
            nystrom_fit(np.zeros((4, 2)), LINEAR3, 1)

    def test_fingerprint_recorded(self):
        assert nystrom_fit(self.landmarks, LINEAR3, 2, fingerprint=77).fingerprint == 77


class TestNystromMap:
    """nystrom_map関数のテスト"""

    def test_single_matches_batch(self):
        landmarks = np.random.default_rng(2).standard_normal((8, 3))
        nmap = nystrom_fit(landmarks, KernelSpec(geometry=EUC3, family="rbf", sigma=1.0), 3)
        x = np.array([0.1, -0.2, 0.3])
        z = nystrom_map(x, nmap)
        assert z.shape == (3,)
        np.testing.assert_allclose(z, nystrom_map_batch(x[np.newaxis], nmap)[0])
