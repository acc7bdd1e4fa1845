"""符号の正規化の単体テスト"""
import numpy as np

from encoders.normalization import normalize
from models.data_models import NormalizationSpec, VladCode


def _code(*blocks):
    return VladCode(blocks=[np.asarray(b, dtype=float) for b in blocks], encoder="vlad")


class TestNormalize:
    """normalize関数のテスト"""

    def test_ssr(self):
        out = normalize(_code([4.0, -4.0, 0.0]), NormalizationSpec(ssr=True))
        np.testing.assert_allclose(out.blocks[0], [2.0, -2.0, 0.0])

    def test_global(self):
        out = normalize(_code([3.0], [4.0]), NormalizationSpec(global_l2=True))
        np.testing.assert_allclose(out.vector, [0.6, 0.8])

    def test_intra_keeps_zero_block(self):
        out = normalize(_code([0.0, 0.0], [3.0, 4.0]), NormalizationSpec(intra=True))
        np.testing.assert_array_equal(out.blocks[0], [0.0, 0.0])
        np.testing.assert_allclose(out.blocks[1], [0.6, 0.8])

    def test_global_zero_vector_unchanged(self):
        out = normalize(_code([0.0, 0.0]), NormalizationSpec(global_l2=True))
        np.testing.assert_array_equal(out.vector, [0.0, 0.0])

    def test_fixed_order(self):
        # intra → [1, 0], [0.6, 0.8]; ssr → 平方根; global → 単位長
        out = normalize(_code([2.0, 0.0], [3.0, 4.0]), NormalizationSpec.from_flags("global,ssr,intra"))
        expected = np.array([1.0, 0.0, np.sqrt(0.6), np.sqrt(0.8)])
        np.testing.assert_allclose(out.vector, expected / np.linalg.norm(expected))

    def test_flags_recorded(self):
        out = normalize(_code([1.0]), NormalizationSpec(intra=True, global_l2=True))
        assert out.normalization == ("intra", "global")
        assert out.encoder == "vlad"

    def test_input_untouched(self):
        code = _code([3.0, 4.0])
        normalize(code, NormalizationSpec(intra=True))
        np.testing.assert_array_equal(code.blocks[0], [3.0, 4.0])
