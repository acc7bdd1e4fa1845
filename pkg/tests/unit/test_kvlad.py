"""kVLAD 内積の単体テスト"""
import numpy as np
import pytest

from codebook.kernel_kmeans import assign_kernel_batch, kernel_kmeans_fit, mean_codebook
from encoders.kvlad import (
    kvlad_cross_gram,
    kvlad_dist_sq,
    kvlad_gram,
    kvlad_inner,
    kvlad_rbf_gram,
    set_statistics,
)
from encoders.normalization import normalize
from encoders.vlad import vlad_encode
from handlers.error_handler import GeometryMismatchError
from models.data_models import ClusterOptions, DescriptorSet, Geometry, KernelSpec, NormalizationSpec

EUC2 = Geometry(tag="euclidean", dims=2)
SPD3 = Geometry(tag="spd", dims=3)


def _blobs(rng, per):
    centers = np.array([[0.0, 0.0], [6.0, 6.0], [-6.0, 6.0]])
    return np.vstack([c + rng.standard_normal((per, 2)) for c in centers])


def _linear_setup(seed=0):
    rng = np.random.default_rng(seed)
    cb = kernel_kmeans_fit(_blobs(rng, 20), KernelSpec(geometry=EUC2, family="linear"), 3, ClusterOptions(seed=1))
    sets = [_blobs(rng, 4) for _ in range(3)]
    return cb, sets


def _random_spd(rng):
    g = rng.standard_normal((3, 3))
    return g @ g.T + 3.0 * np.eye(3)


class TestLinearOracle:
    """線形カーネルでは明示的な VLAD と一致する"""

    def setup_method(self):
        self.cb, self.sets = _linear_setup()
        self.explicit = mean_codebook(self.cb)

    def test_inner_matches_vlad(self):
        x, y = self.sets[0], self.sets[1]
        expected = vlad_encode(x, self.explicit).vector @ vlad_encode(y, self.explicit).vector
        assert kvlad_inner(x, y, self.cb) == pytest.approx(expected, rel=1e-9, abs=1e-8)

    def test_normalized_inner_matches_intra(self):
        intra = NormalizationSpec(intra=True)
        x, y = self.sets[0], self.sets[2]
        expected = vlad_encode(x, self.explicit, intra).vector @ vlad_encode(y, self.explicit, intra).vector
        assert kvlad_inner(x, y, self.cb, normalized=True) == pytest.approx(expected, rel=1e-9, abs=1e-8)

    def test_dist_sq_matches_vlad(self):
        x, y = self.sets[1], self.sets[2]
        diff = vlad_encode(x, self.explicit).vector - vlad_encode(y, self.explicit).vector
        assert kvlad_dist_sq(x, y, self.cb) == pytest.approx(diff @ diff, rel=1e-9, abs=1e-8)


class TestKvladInner:
    """kvlad_inner / kvlad_dist_sqのテスト"""

    def setup_method(self):
        self.cb, self.sets = _linear_setup(1)

    def test_self_inner_non_negative(self):
        for x in self.sets:
            assert kvlad_inner(x, x, self.cb) >= 0.0

    def test_normalized_self_inner_counts_blocks(self):
        x = self.sets[0]
        occupied = np.unique(assign_kernel_batch(x, self.cb)).size
        assert kvlad_inner(x, x, self.cb, normalized=True) == pytest.approx(float(occupied))

    def test_symmetric(self):
        x, y = self.sets[0], self.sets[1]
        assert kvlad_inner(x, y, self.cb) == pytest.approx(kvlad_inner(y, x, self.cb), rel=1e-12, abs=1e-12)

    def test_dist_to_self_is_zero(self):
        x = self.sets[2]
        assert kvlad_dist_sq(x, x, self.cb) == 0.0

    def test_triangle_inequality(self):
        x, y, z = self.sets
        dxy = np.sqrt(kvlad_dist_sq(x, y, self.cb))
        dyz = np.sqrt(kvlad_dist_sq(y, z, self.cb))
        dxz = np.sqrt(kvlad_dist_sq(x, z, self.cb))
        assert dxz <= dxy + dyz + 1e-9

    def test_statistics_counts(self):
        stats = set_statistics(self.sets[0], self.cb)
        assert stats.counts.sum() == self.sets[0].shape[0]
        assert np.all(stats.norms_sq >= 0.0)

    def test_geometry_mismatch(self):
        s = DescriptorSet(id=0, label=0, geometry=SPD3, descriptors=np.eye(3)[np.newaxis])
        with pytest.raises(GeometryMismatchError):
            kvlad_inner(s, s, self.cb)

    def test_shape_mismatch(self):
        with pytest.raises(GeometryMismatchError):
            kvlad_inner(np.zeros((3, 4)), np.zeros((3, 4)), self.cb)


class TestKvladGram:
    """kvlad_gram / kvlad_cross_gram / kvlad_rbf_gramのテスト"""

    def setup_method(self):
        self.cb, arrays = _linear_setup(2)
        self.sets = [
            DescriptorSet(id=10 + i, label=i % 2, geometry=EUC2, descriptors=a)
            for i, a in enumerate(arrays)
        ]

    def test_gram_matches_pairwise(self):
        g = kvlad_gram(self.sets, self.cb)
        assert g.item_ids == (10, 11, 12)
        np.testing.assert_array_equal(g.values, g.values.T)
        assert g.values[0, 2] == pytest.approx(kvlad_inner(self.sets[0], self.sets[2], self.cb), rel=1e-12)
        assert g.values[1, 1] == pytest.approx(kvlad_inner(self.sets[1], self.sets[1], self.cb), rel=1e-12)

    def test_cross_gram(self):
        g = kvlad_gram(self.sets, self.cb, normalized=True)
        cross = kvlad_cross_gram(self.sets[:1], self.sets[1:], self.cb, normalized=True)
        assert cross.row_ids == (10,)
        assert cross.col_ids == (11, 12)
        np.testing.assert_allclose(cross.values, g.values[:1, 1:], rtol=1e-12, atol=1e-12)

    def test_rbf_gram(self):
        g = kvlad_rbf_gram(kvlad_gram(self.sets, self.cb), 0.01)
        np.testing.assert_array_equal(np.diag(g.values), np.ones(3))
        assert np.all(g.values > 0.0)
        assert np.all(g.values <= 1.0)

    def test_rbf_gram_rejects_gamma(self):
        with pytest.raises(ValueError):
            kvlad_rbf_gram(kvlad_gram(self.sets, self.cb), 0.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            kvlad_gram([], self.cb)

    def test_stein_gram_psd(self):
        rng = np.random.default_rng(3)
        k = KernelSpec(geometry=SPD3, family="stein", sigma=2.0)
        cb = kernel_kmeans_fit(np.stack([_random_spd(rng) for _ in range(30)]), k, 3, ClusterOptions(seed=0))
        sets = [np.stack([_random_spd(rng) for _ in range(5)]) for _ in range(8)]
        values = kvlad_gram(sets, cb).values
        assert np.linalg.eigvalsh(values).min() >= -1e-8 * np.abs(values).max()
