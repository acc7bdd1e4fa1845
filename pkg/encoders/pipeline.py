"""写像してから VLAD する nVLAD / fVLAD

全記述子を Nyström 写像またはフーリエ写像で r 次元に写し、その空間で学習した
明示的コードブックで通常の VLAD を行う。コードブックと写像の対応は
フィンガープリントで確認する。
"""
import logging
from typing import Literal, Optional

import numpy as np

from encoders.fourier import fourier_map_batch
from encoders.nystrom import nystrom_map_batch
from encoders.vlad import vlad_encode
from handlers.error_handler import ConfigError, FingerprintMismatchError
from models.data_models import DescriptorSet, ExplicitCodebook, FourierMap, NormalizationSpec, NystromMap, VladCode

_logger = logging.getLogger(__name__)

MappedMethod = Literal["nvlad", "fvlad"]


def map_descriptors(x, method: MappedMethod, fmap: NystromMap | FourierMap) -> np.ndarray:
    """記述子配列を写像で (N, r) に写す。

    Raises:
        ConfigError: 方式と写像の種類が一致しない場合
    """
    if isinstance(x, DescriptorSet):
        x = x.descriptors
    if method == "nvlad" and isinstance(fmap, NystromMap):
        return nystrom_map_batch(x, fmap)
    if method == "fvlad" and isinstance(fmap, FourierMap):
        return fourier_map_batch(x, fmap)
    raise ConfigError("encoder", f"符号化方式 {method} に {type(fmap).__name__} は使えません")


def pipeline_encode(
    descriptors: DescriptorSet | np.ndarray,
    method: MappedMethod,
    fmap: NystromMap | FourierMap,
    cb: ExplicitCodebook,
    norm: Optional[NormalizationSpec] = None,
) -> VladCode:
    """記述子を写像してから VLAD 符号にする。

    Args:
        descriptors: DescriptorSet または記述子配列
        method: "nvlad" または "fvlad"
        fmap: 写像
        cb: 写像後のベクトルで学習した明示的コードブック
        norm: 最後に適用する正規化

    Returns:
        VladCode: m ブロック × r 次元の符号

    Raises:
        FingerprintMismatchError: コードブックが別の写像で学習されている場合
    """
    if cb.fingerprint != fmap.fingerprint:
        raise FingerprintMismatchError(cb.fingerprint, fmap.fingerprint)
    mapped = map_descriptors(descriptors, method, fmap)
    return vlad_encode(mapped, cb, norm, encoder=method)
