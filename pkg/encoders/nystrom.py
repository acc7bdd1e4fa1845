"""Nyström 近似による nVLAD 用の写像

ランドマークのグラム行列 K = VΣVᵀ の上位 r 固有対から
z_N(x) = Σ^{-1/2} Vᵀ [k(x, t_1), …, k(x, t_M)]ᵀ を作る。
"""
import logging

import numpy as np

from geometry.descriptors import as_stack
from geometry.kernels import gram, kernel_matrix
from handlers.error_handler import ConfigError, DegenerateKernelError, GeometryMismatchError
from models.data_models import KernelSpec, NystromMap

_logger = logging.getLogger(__name__)

# λ_max に対する固有値の相対下限
EIG_FLOOR = 1e-10


def landmark_count(total: int, r: int, minimum: int = 256, factor: int = 4) -> int:
    """ランドマーク数 M = min(total, max(factor·r, minimum))。"""
    return min(total, max(factor * r, minimum))


def select_landmarks(descriptors: np.ndarray, r: int, seed: int, minimum: int = 256, factor: int = 4) -> np.ndarray:
    """学習記述子から一様にランドマークを選ぶ。

    Args:
        descriptors: 学習記述子 (N, *shape)
        r: 目標次元
        seed: 乱数シード
        minimum: ランドマーク数の下限
        factor: ランドマーク数 = factor × r

    Returns:
        np.ndarray: 選ばれた添字（昇順）
    """
    total = descriptors.shape[0]
    count = landmark_count(total, r, minimum, factor)
    if count == total:
        return np.arange(total)
    rng = np.random.default_rng([seed, 2])
    return np.sort(rng.choice(total, size=count, replace=False))


def nystrom_fit(
    landmarks,
    k: KernelSpec,
    r: int,
    eig_floor: float = EIG_FLOOR,
    fingerprint: int = 0,
) -> NystromMap:
    """ランドマークのグラム行列を固有分解して Nyström 写像を作る。

    Args:
        landmarks: ランドマーク記述子 (M, *shape)
        k: カーネル仕様
        r: 目標次元（r <= M）
        eig_floor: λ_max に対する固有値の相対下限
        fingerprint: 写像に記録するフィンガープリント

    Returns:
        NystromMap: 実効次元が r 以下の写像（下限未満の固有値は捨てる）

    Raises:
        ConfigError: r が範囲外の場合
        DegenerateKernelError: 使える固有値が一つもない場合
    """
    try:
        landmarks = as_stack(landmarks, k.geometry)
    except ValueError:
        raise GeometryMismatchError(k.geometry.describe(), f"shape {np.shape(landmarks)}") from None
    m = landmarks.shape[0]
    if not 1 <= r <= m:
        raise ConfigError("r", f"r={r} はランドマーク数 {m} 以下の正の整数である必要があります")
    w, v = np.linalg.eigh(gram(landmarks, k).values)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    if w[0] <= 0.0:
        raise DegenerateKernelError("ランドマークのグラム行列")
    keep = np.flatnonzero(w[:r] > eig_floor * w[0])
    if keep.size < r:
        _logger.warning("固有値の下限により Nyström の次元を %d から %d に縮小します", r, keep.size)
    projection = (v[:, keep] / np.sqrt(w[keep])).T
    _logger.info("Nyström 写像を作成しました: M=%d, r=%d", m, keep.size)
    return NystromMap(
        landmarks=landmarks,
        kernel=k,
        projection=projection,
        eigenvalues=w,
        fingerprint=fingerprint,
    )


def nystrom_map_batch(x, nmap: NystromMap) -> np.ndarray:
    """記述子配列を Nyström 写像で (N, r) に写す。

    Raises:
        GeometryMismatchError: 幾何が写像と一致しない場合
    """
    return kernel_matrix(x, nmap.landmarks, nmap.kernel) @ nmap.projection.T


def nystrom_map(x, nmap: NystromMap) -> np.ndarray:
    """記述子一つを Nyström 写像で r 次元ベクトルに写す。"""
    z = nystrom_map_batch(x, nmap)
    if z.shape[0] != 1:
        raise ValueError("nystrom_map は記述子一つを受け取ります")
    return z[0]
