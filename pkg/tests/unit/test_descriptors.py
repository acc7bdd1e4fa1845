"""記述子の検証・平坦化の単体テスト"""
import numpy as np
import pytest

from geometry.descriptors import (
    as_stack,
    first_invalid,
    flat_geometry,
    flatten_descriptors,
    grassmann_log_vec,
    require_valid,
    spd_log_vec,
    validate,
)
from handlers.error_handler import ConfigError, DimensionMismatchError, InvalidDescriptorError
from models.data_models import Geometry

SPD2 = Geometry(tag="spd", dims=2)


def _random_spd(n, rng):
    g = rng.standard_normal((n, n))
    return g @ g.T + n * np.eye(n)


def _random_basis(d, p, rng):
    q, _ = np.linalg.qr(rng.standard_normal((d, p)))
    return q


class TestValidate:
    """validate関数のテスト"""

    def test_identity_is_spd(self):
        assert validate(np.eye(2), SPD2) is None

    def test_asymmetric(self):
        assert validate(np.array([[1.0, 0.5], [0.0, 1.0]]), SPD2) == "asymmetric"

    def test_not_positive_definite(self):
        assert validate(np.array([[1.0, 2.0], [2.0, 1.0]]), SPD2) == "not positive definite"

    def test_not_orthonormal(self):
        g = Geometry(tag="grassmann", dims=3, subdim=1)
        assert validate(np.array([[2.0], [0.0], [0.0]]), g) == "not orthonormal"

    def test_non_finite(self):
        g = Geometry(tag="euclidean", dims=2)
        assert validate(np.array([1.0, np.inf]), g) == "non-finite"

    def test_dimension_mismatch(self):
        assert validate(np.eye(3), SPD2) == "dimension mismatch"


class TestFirstInvalid:
    """first_invalid / require_validのテスト"""

    def test_reports_position(self):
        stack = np.stack([np.eye(2), np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]])])
        assert first_invalid(stack, SPD2) == (2, "not positive definite")

    def test_all_valid(self):
        rng = np.random.default_rng(0)
        stack = np.stack([_random_spd(2, rng) for _ in range(5)])
        assert first_invalid(stack, SPD2) is None

    def test_require_valid_raises(self):
        stack = np.stack([np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]])])
        with pytest.raises(InvalidDescriptorError) as exc_info:
            require_valid(stack, SPD2)
        assert exc_info.value.index == 1
        assert exc_info.value.diagnostic == "asymmetric"

    def test_as_stack_promotes_single(self):
        assert as_stack(np.eye(2), SPD2).shape == (1, 2, 2)

    def test_as_stack_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            as_stack(np.zeros((4, 3, 3)), SPD2)


class TestSpdLogVec:
    """spd_log_vec関数のテスト"""

    def test_identity(self):
        np.testing.assert_allclose(spd_log_vec(np.eye(2)), [0.0, 0.0, 0.0], atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(spd_log_vec(np.diag([np.e, np.e])), [1.0, 1.0, 0.0], atol=1e-12)

    def test_isometry(self):
        rng = np.random.default_rng(1)
        a = _random_spd(4, rng)
        w, q = np.linalg.eigh(a)
        logm = (q * np.log(w)) @ q.T
        v = spd_log_vec(a)
        assert v.size == 10
        assert np.dot(v, v) == pytest.approx(np.sum(logm * logm), rel=1e-10)

    def test_rejects_non_spd(self):
        with pytest.raises(InvalidDescriptorError):
            spd_log_vec(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestGrassmannLogVec:
    """grassmann_log_vec関数のテスト"""

    def test_base_point_is_zero(self):
        u = np.eye(4)[:, :2]
        np.testing.assert_allclose(grassmann_log_vec(u), np.zeros(4), atol=1e-15)

    def test_principal_angle(self):
        theta = 0.3
        u = np.array([[np.cos(theta)], [0.0], [np.sin(theta)]])
        np.testing.assert_allclose(grassmann_log_vec(u), [0.0, theta], atol=1e-12)

    def test_basis_invariance(self):
        rng = np.random.default_rng(2)
        u = _random_basis(6, 2, rng)
        r = _random_basis(2, 2, rng)
        np.testing.assert_allclose(grassmann_log_vec(u @ r), grassmann_log_vec(u), atol=1e-10)

    def test_length(self):
        rng = np.random.default_rng(3)
        assert grassmann_log_vec(_random_basis(7, 3, rng)).shape == (12,)


class TestFlatten:
    """flatten_descriptors / flat_geometryのテスト"""

    def test_spd_batch_matches_single(self):
        rng = np.random.default_rng(4)
        stack = np.stack([_random_spd(3, rng) for _ in range(4)])
        flat = flatten_descriptors(stack, Geometry(tag="spd", dims=3))
        np.testing.assert_allclose(flat[2], spd_log_vec(stack[2]), atol=1e-12)

    def test_flat_geometry_dims(self):
        assert flat_geometry(Geometry(tag="spd", dims=5)).dims == 15
        assert flat_geometry(Geometry(tag="grassmann", dims=31, subdim=3)).dims == 84

    def test_full_grassmann_rejected(self):
        with pytest.raises(ConfigError):
            flat_geometry(Geometry(tag="grassmann", dims=3, subdim=3))

    def test_euclidean_unchanged(self):
        x = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(flatten_descriptors(x, Geometry(tag="euclidean", dims=2)), x)
