"""従来の VLAD 符号化

ブロック s は、セル s に割り当てられた記述子の残差 (c_s − x_i) の和。
"""
import logging
from typing import Optional

import numpy as np

from codebook.kmeans import assign_explicit_batch
from encoders.normalization import normalize
from handlers.error_handler import DimensionMismatchError
from models.data_models import DescriptorSet, EncoderTag, ExplicitCodebook, NormalizationSpec, VladCode

_logger = logging.getLogger(__name__)


def descriptor_matrix(descriptors: DescriptorSet | np.ndarray) -> np.ndarray:
    """DescriptorSet またはベクトル配列から (N, d) 行列を取り出す。

    Raises:
        ValueError: 記述子が一つもない場合
    """
    if isinstance(descriptors, DescriptorSet):
        x = descriptors.descriptors
    else:
        x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError("(N, d)", x.shape)
    if x.shape[0] == 0:
        raise ValueError("記述子集合が空のため符号化できません")
    return x


def residual_blocks(x: np.ndarray, cb: ExplicitCodebook) -> np.ndarray:
    """(m, d) の残差和ブロックを計算する。割り当てのないブロックは厳密に 0。"""
    labels = assign_explicit_batch(x, cb)
    blocks = np.zeros((cb.m, cb.dim))
    np.add.at(blocks, labels, cb.centers[labels] - x)
    return blocks


def vlad_encode(
    descriptors: DescriptorSet | np.ndarray,
    cb: ExplicitCodebook,
    norm: Optional[NormalizationSpec] = None,
    encoder: EncoderTag = "vlad",
) -> VladCode:
    """ユークリッド記述子の集合を VLAD 符号にする。

    Args:
        descriptors: DescriptorSet または (N, d) 配列
        cb: 明示的コードブック
        norm: 最後に適用する正規化（None なら適用しない）
        encoder: 符号に記録する符号化方式

    Returns:
        VladCode: m ブロック × d 次元の符号

    Raises:
        ValueError: 記述子集合が空の場合
        DimensionMismatchError: 次元がコードブックと一致しない場合
    """
    x = descriptor_matrix(descriptors)
    if x.shape[1] != cb.dim:
        raise DimensionMismatchError(cb.dim, x.shape[1])
    code = VladCode(blocks=list(residual_blocks(x, cb)), encoder=encoder)
    if norm is not None:
        code = normalize(code, norm)
    return code
