"""ランダムフーリエ特徴による fVLAD 用の写像

ユークリッド RBF カーネル専用。ω ~ N(0, σ^{-2} I)、b ~ U[0, 2π) をシードから生成し、
z_F(x) = √(2/r) cos(ωᵀx + b) とする。
"""
import logging
from typing import Optional

import numpy as np

from handlers.error_handler import ConfigError, DimensionMismatchError
from models.data_models import FourierMap, compute_fingerprint

_logger = logging.getLogger(__name__)


def fourier_fit(d: int, sigma: float, r: int, seed: int, fingerprint: Optional[int] = None) -> FourierMap:
    """周波数と位相をシードから決定的に生成する。

    同じ (seed, r, d, σ) からは常にビット単位で同じ写像が得られる。

    Args:
        d: 入力次元
        sigma: RBF のバンド幅 σ
        r: 特徴数
        seed: 乱数シード
        fingerprint: 記録するフィンガープリント（省略時はパラメータから計算）

    Returns:
        FourierMap: 生成した写像
    """
    if d < 1:
        raise ConfigError("d", f"入力次元は 1 以上である必要があります: {d}")
    if r < 1:
        raise ConfigError("r", f"特徴数は 1 以上である必要があります: {r}")
    if sigma <= 0:
        raise ConfigError("sigma", f"σ は正である必要があります: {sigma}")
    rng = np.random.default_rng(seed)
    omegas = rng.standard_normal((r, d)) / sigma
    offsets = rng.uniform(0.0, 2.0 * np.pi, size=r)
    if fingerprint is None:
        fingerprint = compute_fingerprint("fourier", d, r, sigma, seed)
    _logger.debug("フーリエ写像を生成しました: d=%d, r=%d, σ=%g", d, r, sigma)
    return FourierMap(omegas=omegas, offsets=offsets, sigma=sigma, seed=seed, fingerprint=fingerprint)


def fourier_map_batch(x, fmap: FourierMap) -> np.ndarray:
    """ベクトル配列 (N, d) を (N, r) の特徴に写す。

    Raises:
        DimensionMismatchError: 次元が一致しない場合
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != fmap.d:
        raise DimensionMismatchError(fmap.d, x.shape[-1])
    return np.sqrt(2.0 / fmap.r) * np.cos(x @ fmap.omegas.T + fmap.offsets)


def fourier_map(x, fmap: FourierMap) -> np.ndarray:
    """ベクトル一つを r 次元の特徴に写す。各成分は [−√(2/r), √(2/r)] に収まる。"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError((fmap.d,), x.shape)
    return fourier_map_batch(x[np.newaxis], fmap)[0]
