"""VLAD 符号化の単体テスト"""
import numpy as np
import pytest

from encoders.vlad import descriptor_matrix, residual_blocks, vlad_encode
from handlers.error_handler import DimensionMismatchError
from models.data_models import DescriptorSet, ExplicitCodebook, Geometry, NormalizationSpec


class TestVladEncode:
    """vlad_encode関数のテスト"""

    def setup_method(self):
        self.cb = ExplicitCodebook(centers=[[0.0, 0.0], [10.0, 10.0]])

    def test_single_descriptor(self):
        code = vlad_encode(np.array([[1.0, 0.0]]), self.cb)
        np.testing.assert_array_equal(code.blocks[0], [-1.0, 0.0])
        np.testing.assert_array_equal(code.blocks[1], [0.0, 0.0])
        assert code.encoder == "vlad"
        assert code.block_lengths == (2, 2)

    def test_descriptors_on_centers(self):
        code = vlad_encode(np.array([[0.0, 0.0], [10.0, 10.0]]), self.cb)
        np.testing.assert_array_equal(code.vector, np.zeros(4))

    def test_duplication_doubles_blocks(self):
        x = np.array([[1.0, 2.0], [3.0, 1.0], [9.0, 9.0]])
        once = vlad_encode(x, self.cb)
        twice = vlad_encode(np.vstack([x, x]), self.cb)
        np.testing.assert_array_equal(twice.vector, 2.0 * once.vector)

    def test_accepts_descriptor_set(self):
        s = DescriptorSet(id=0, label=0, geometry=Geometry(tag="euclidean", dims=2), descriptors=[[9.0, 11.0]])
        code = vlad_encode(s, self.cb)
        np.testing.assert_array_equal(code.blocks[1], [1.0, -1.0])

    def test_normalization_applied(self):
        code = vlad_encode(np.array([[3.0, 4.0], [-3.0, 0.0]]), self.cb, NormalizationSpec(global_l2=True))
        assert np.linalg.norm(code.vector) == pytest.approx(1.0)
        assert code.normalization == ("global",)

    def test_encoder_tag(self):
        assert vlad_encode(np.array([[1.0, 1.0]]), self.cb, encoder="le-vlad").encoder == "le-vlad"

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            vlad_encode(np.zeros((2, 3)), self.cb)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            vlad_encode(np.zeros((0, 2)), self.cb)


class TestResidualBlocks:
    """residual_blocks / descriptor_matrixのテスト"""

    def test_sum_per_cell(self):
        cb = ExplicitCodebook(centers=[[0.0], [10.0]])
        blocks = residual_blocks(np.array([[1.0], [2.0], [12.0]]), cb)
        np.testing.assert_array_equal(blocks, [[-3.0], [-2.0]])

    def test_rejects_matrices(self):
        with pytest.raises(DimensionMismatchError):
            descriptor_matrix(np.zeros((2, 2, 2)))
