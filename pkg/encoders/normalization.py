"""符号の正規化

intra（ブロックごとの ℓ2）・ssr（符号付き平方根）・global（全体の ℓ2）を
この順で適用し、適用したフラグを符号に記録する。
"""
import numpy as np

from models.data_models import NormalizationSpec, VladCode


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0.0 else v


def normalize(code: VladCode, spec: NormalizationSpec) -> VladCode:
    """符号に正規化を適用する。

    Args:
        code: 対象の符号
        spec: 適用する正規化

    Returns:
        VladCode: 正規化後の符号（ゼロブロック・ゼロベクトルはそのまま）
    """
    blocks = [b.copy() for b in code.blocks]
    if spec.intra:
        blocks = [_unit(b) for b in blocks]
    if spec.ssr:
        blocks = [np.sign(b) * np.sqrt(np.abs(b)) for b in blocks]
    if spec.global_l2:
        norm = np.linalg.norm(np.concatenate(blocks))
        if norm > 0.0:
            blocks = [b / norm for b in blocks]
    return VladCode(
        blocks=blocks,
        encoder=code.encoder,
        normalization=code.normalization + spec.flags,
    )
