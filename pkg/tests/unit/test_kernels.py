"""カーネル関数の単体テスト"""
import logging

import numpy as np
import pytest

from geometry.kernels import (
    gram,
    hilbert_dist_sq,
    kernel_diag,
    kernel_matrix,
    kernel_value,
    linear_kernel,
    projection_kernel,
    rbf_kernel,
    stein_divergence,
    stein_kernel,
)
from handlers.error_handler import GeometryMismatchError, InconsistentKernelError, NonSpdError
from models.data_models import Geometry, KernelSpec

EUC1 = Geometry(tag="euclidean", dims=1)


def _random_spd(n, rng):
    g = rng.standard_normal((n, n))
    return g @ g.T + n * np.eye(n)


def _random_basis(d, p, rng):
    q, _ = np.linalg.qr(rng.standard_normal((d, p)))
    return q


class TestEuclideanKernels:
    """RBF・線形カーネルのテスト"""

    def test_rbf_identical(self):
        assert rbf_kernel([1.0, 2.0], [1.0, 2.0], 1.0) == 1.0

    def test_rbf_values(self):
        assert rbf_kernel([0.0, 0.0], [1.0, 0.0], 1.0) == pytest.approx(0.606531, abs=1e-6)
        assert rbf_kernel([0.0], [2.0], 1.0) == pytest.approx(0.135335, abs=1e-6)

    def test_linear_values(self):
        assert linear_kernel([1.0, 0.0], [0.0, 1.0]) == 0.0
        assert linear_kernel([1.0, 2.0], [3.0, 4.0]) == 11.0
        assert linear_kernel([3.0, 4.0], [3.0, 4.0]) == 25.0

    def test_symmetric_exactly(self):
        rng = np.random.default_rng(0)
        x, y = rng.standard_normal(5), rng.standard_normal(5)
        assert rbf_kernel(x, y, 0.7) == rbf_kernel(y, x, 0.7)


class TestStein:
    """Stein ダイバージェンス・カーネルのテスト"""

    def test_identical(self):
        rng = np.random.default_rng(1)
        a = _random_spd(3, rng)
        assert stein_divergence(a, a) == pytest.approx(0.0, abs=1e-12)
        assert stein_kernel(a, a, 2.0) == pytest.approx(1.0)

    def test_scalar_closed_form(self):
        assert stein_divergence([[1.0]], [[4.0]]) == pytest.approx(0.223144, abs=1e-6)
        assert stein_kernel([[1.0]], [[4.0]], 1.0) == pytest.approx(0.8, abs=1e-12)

    def test_diagonal(self):
        assert stein_divergence(np.eye(2), 4.0 * np.eye(2)) == pytest.approx(0.446287, abs=1e-6)

    def test_congruence_invariance(self):
        rng = np.random.default_rng(2)
        a, b = _random_spd(3, rng), _random_spd(3, rng)
        w = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        assert stein_divergence(w @ a @ w.T, w @ b @ w.T) == pytest.approx(stein_divergence(a, b), abs=1e-8)

    def test_non_spd(self):
        with pytest.raises(NonSpdError):
            stein_divergence(np.eye(2), -np.eye(2))

    def test_sigma_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="geometry.kernels"):
            stein_kernel(np.eye(5), np.eye(5), 0.3)
        assert "σ=0.3" in caplog.text

    def test_half_integer_sigma_no_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="geometry.kernels"):
            stein_kernel(np.eye(5), np.eye(5), 1.5)
        assert caplog.text == ""


class TestProjectionKernel:
    """射影カーネルのテスト"""

    def test_orthogonal(self):
        u = np.array([[1.0], [0.0], [0.0]])
        v = np.array([[0.0], [1.0], [0.0]])
        assert projection_kernel(u, v, 1.0) == 1.0

    def test_identical(self):
        u = np.eye(4)[:, :2]
        assert projection_kernel(u, u, 0.5) == pytest.approx(np.e, abs=1e-12)

    def test_basis_invariance(self):
        rng = np.random.default_rng(3)
        u, v = _random_basis(6, 2, rng), _random_basis(6, 2, rng)
        r, q = _random_basis(2, 2, rng), _random_basis(2, 2, rng)
        assert projection_kernel(u @ r, v @ q, 1.0) == pytest.approx(projection_kernel(u, v, 1.0), abs=1e-12)


class TestHilbertDist:
    """hilbert_dist_sq関数のテスト"""

    def test_values(self):
        assert hilbert_dist_sq(1.0, 1.0, 1.0) == 0.0
        assert hilbert_dist_sq(1.0, 0.5, 1.0) == 1.0

    def test_linear_matches_euclidean(self):
        rng = np.random.default_rng(4)
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        d2 = hilbert_dist_sq(x @ x, x @ y, y @ y)
        assert d2 == pytest.approx(np.sum((x - y) ** 2), abs=1e-10)

    def test_small_negative_clamped(self):
        assert hilbert_dist_sq(1.0, 1.0 + 1e-10, 1.0) == 0.0

    def test_inconsistent(self):
        with pytest.raises(InconsistentKernelError):
            hilbert_dist_sq(1.0, 2.0, 1.0)


class TestMatrixForms:
    """kernel_matrix / gram のテスト"""

    def test_rbf_two_points(self):
        k = KernelSpec(geometry=EUC1, family="rbf", sigma=1.0)
        g = gram(np.array([[0.0], [2.0]]), k)
        np.testing.assert_allclose(g.values, [[1.0, 0.135335], [0.135335, 1.0]], atol=1e-6)

    @pytest.mark.parametrize("family, geometry, sigma", [
        ("rbf", Geometry(tag="euclidean", dims=3), 1.3),
        ("linear", Geometry(tag="euclidean", dims=3), 1.0),
        ("stein", Geometry(tag="spd", dims=3), 2.0),
        ("projection", Geometry(tag="grassmann", dims=5, subdim=2), 0.5),
    ])
    def test_matches_pairwise(self, family, geometry, sigma):
        rng = np.random.default_rng(5)
        if geometry.tag == "euclidean":
            x = rng.standard_normal((6, 3))
        elif geometry.tag == "spd":
            x = np.stack([_random_spd(3, rng) for _ in range(6)])
        else:
            x = np.stack([_random_basis(5, 2, rng) for _ in range(6)])
        k = KernelSpec(geometry=geometry, family=family, sigma=sigma)
        g = gram(x, k)
        expected = np.array([[kernel_value(a, b, k) for b in x] for a in x])
        np.testing.assert_allclose(g.values, expected, rtol=1e-10, atol=1e-12)
        np.testing.assert_array_equal(g.values, g.values.T)
        np.testing.assert_allclose(kernel_matrix(x[:2], x, k), expected[:2], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(kernel_diag(x, k), np.diag(expected), rtol=1e-10)

    def test_rbf_gram_psd(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((50, 4)) * 2.0
        k = KernelSpec(geometry=Geometry(tag="euclidean", dims=4), family="rbf", sigma=1.0)
        assert np.linalg.eigvalsh(gram(x, k).values).min() >= -1e-8

    def test_stein_gram_psd(self):
        rng = np.random.default_rng(6)
        x = np.stack([_random_spd(3, rng) for _ in range(50)])
        k = KernelSpec(geometry=Geometry(tag="spd", dims=3), family="stein", sigma=2.0)
        assert np.linalg.eigvalsh(gram(x, k).values).min() >= -1e-8

    def test_projection_gram_psd(self):
        rng = np.random.default_rng(7)
        x = np.stack([_random_basis(6, 2, rng) for _ in range(50)])
        k = KernelSpec(geometry=Geometry(tag="grassmann", dims=6, subdim=2), family="projection", sigma=1.0)
        assert np.linalg.eigvalsh(gram(x, k).values).min() >= -1e-8

    def test_geometry_mismatch(self):
        k = KernelSpec(geometry=Geometry(tag="euclidean", dims=3), family="rbf")
        with pytest.raises(GeometryMismatchError):
            gram(np.zeros((4, 2)), k)

    def test_item_ids(self):
        k = KernelSpec(geometry=EUC1, family="linear")
        assert gram(np.array([[1.0], [2.0]]), k, item_ids=[5, 9]).item_ids == (5, 9)
