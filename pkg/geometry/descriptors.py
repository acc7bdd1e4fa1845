"""記述子の検証と平坦化

ユークリッド・SPD・Grassmann の三つの幾何について、記述子の不変条件の検証と、
log-Euclidean ベースライン用のベクトル化（SPD の行列対数、Grassmann の対数写像）を提供する。
"""
import logging
from typing import Optional

import numpy as np

from handlers.error_handler import ConfigError, DimensionMismatchError, InvalidDescriptorError
from models.data_models import Geometry

_logger = logging.getLogger(__name__)

# 対称性の相対許容誤差
SYMMETRY_TOL = 1e-10
# 正規直交性の許容誤差
ORTHONORMAL_TOL = 1e-8

_SQRT2 = np.sqrt(2.0)


def validate(x: np.ndarray, g: Geometry) -> Optional[str]:
    """記述子一つが幾何の不変条件を満たすか検証する。

    Args:
        x: 記述子（ベクトルまたは行列）
        g: 幾何

    Returns:
        Optional[str]: 問題なければ None、違反時は "asymmetric" などの診断名
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != g.descriptor_shape:
        return "dimension mismatch"
    if not np.all(np.isfinite(x)):
        return "non-finite"
    if g.tag == "spd":
        scale = max(1.0, float(np.max(np.abs(x))))
        if np.max(np.abs(x - x.T)) > SYMMETRY_TOL * scale:
            return "asymmetric"
        try:
            np.linalg.cholesky(x)
        except np.linalg.LinAlgError:
            return "not positive definite"
    elif g.tag == "grassmann":
        if np.max(np.abs(x.T @ x - np.eye(g.subdim))) > ORTHONORMAL_TOL:
            return "not orthonormal"
    return None


def first_invalid(stack: np.ndarray, g: Geometry) -> Optional[tuple[int, str]]:
    """積み重ねた記述子のうち最初に不変条件を破るものを探す。

    Args:
        stack: 記述子配列 (N, *shape)
        g: 幾何

    Returns:
        Optional[tuple[int, str]]: (位置, 診断名)。全て正常なら None
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[1:] != g.descriptor_shape:
        return 0, "dimension mismatch"
    finite = np.isfinite(stack).reshape(stack.shape[0], -1).all(axis=1)
    if not finite.all():
        return int(np.argmin(finite)), "non-finite"
    if g.tag == "spd":
        scale = np.maximum(1.0, np.abs(stack).max(axis=(1, 2)))
        asym = np.abs(stack - np.swapaxes(stack, 1, 2)).max(axis=(1, 2)) > SYMMETRY_TOL * scale
        if asym.any():
            return int(np.argmax(asym)), "asymmetric"
        try:
            np.linalg.cholesky(stack)
        except np.linalg.LinAlgError:
            # どの記述子で失敗したかを一つずつ確認する
            for i in range(stack.shape[0]):
                diagnostic = validate(stack[i], g)
                if diagnostic is not None:
                    return i, diagnostic
    elif g.tag == "grassmann":
        gram = np.swapaxes(stack, 1, 2) @ stack
        err = np.abs(gram - np.eye(g.subdim)).max(axis=(1, 2))
        bad = err > ORTHONORMAL_TOL
        if bad.any():
            return int(np.argmax(bad)), "not orthonormal"
    return None


def require_valid(stack: np.ndarray, g: Geometry) -> np.ndarray:
    """記述子配列を検証し、float64 配列として返す。

    Raises:
        DimensionMismatchError: 形状が幾何と一致しない場合
        InvalidDescriptorError: 不変条件を満たさない記述子がある場合
    """
    stack = as_stack(stack, g)
    failure = first_invalid(stack, g)
    if failure is not None:
        index, diagnostic = failure
        raise InvalidDescriptorError(diagnostic, index)
    return stack


def as_stack(x: np.ndarray, g: Geometry) -> np.ndarray:
    """単一の記述子または記述子配列を (N, *shape) の配列に揃える。

    Raises:
        DimensionMismatchError: 形状が幾何と一致しない場合
    """
    x = np.asarray(x, dtype=np.float64)
    shape = g.descriptor_shape
    if x.shape == shape:
        return x[np.newaxis]
    if x.ndim != len(shape) + 1 or x.shape[1:] != shape:
        raise DimensionMismatchError(shape, x.shape[1:] if x.ndim == len(shape) + 1 else x.shape)
    return x


def spd_log_vec(a: np.ndarray) -> np.ndarray:
    """SPD 行列の行列対数を n(n+1)/2 次元ベクトルに平坦化する。

    先頭に対角要素、続いて上三角の非対角要素を √2 倍して並べるため、
    ベクトルの内積は行列の Frobenius 内積に一致する。

    Args:
        a: SPD 行列 (n, n)

    Returns:
        np.ndarray: 長さ n(n+1)/2 のベクトル

    Raises:
        InvalidDescriptorError: a が SPD でない場合
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    diagnostic = validate(a, Geometry(tag="spd", dims=n))
    if diagnostic is not None:
        raise InvalidDescriptorError(diagnostic)
    return spd_log_vec_batch(a[np.newaxis])[0]


def spd_log_vec_batch(stack: np.ndarray) -> np.ndarray:
    """spd_log_vec を積み重ねた SPD 行列 (N, n, n) にまとめて適用する。"""
    w, q = np.linalg.eigh(stack)
    if np.any(w <= 0):
        raise InvalidDescriptorError("not positive definite")
    logm = (q * np.log(w)[:, np.newaxis, :]) @ np.swapaxes(q, 1, 2)
    n = stack.shape[1]
    iu = np.triu_indices(n, k=1)
    diag = np.diagonal(logm, axis1=1, axis2=2)
    off = logm[:, iu[0], iu[1]] * _SQRT2
    return np.concatenate([diag, off], axis=1)


def grassmann_log_vec(u: np.ndarray) -> np.ndarray:
    """Grassmann 点を I_{d×p} における対数写像で平坦化する。

    接ベクトルの上側 p×p ブロックは常に 0 なので、残りの (d−p)×p を返す。
    基底の取り方（U → UR）に依存しない。

    Args:
        u: 正規直交基底 (d, p)

    Returns:
        np.ndarray: 長さ (d−p)·p のベクトル
    """
    u = np.asarray(u, dtype=np.float64)
    d, p = u.shape
    diagnostic = validate(u, Geometry(tag="grassmann", dims=d, subdim=p))
    if diagnostic is not None:
        raise InvalidDescriptorError(diagnostic)
    return grassmann_log_vec_batch(u[np.newaxis])[0]


def grassmann_log_vec_batch(stack: np.ndarray) -> np.ndarray:
    """grassmann_log_vec を積み重ねた基底 (N, d, p) にまとめて適用する。"""
    n_items, d, p = stack.shape
    out = np.empty((n_items, (d - p) * p))
    for i in range(n_items):
        top = stack[i, :p, :]
        bottom = stack[i, p:, :]
        # M = (I − BBᵀ) U (BᵀU)^{-1} の下側ブロック
        try:
            m = np.linalg.solve(top.T, bottom.T).T
        except np.linalg.LinAlgError:
            _logger.warning("基準点と直交する方向を含むため擬似逆行列で対数写像を計算します（位置 %d）", i)
            m = bottom @ np.linalg.pinv(top)
        q, s, vt = np.linalg.svd(m, full_matrices=False)
        out[i] = ((q * np.arctan(s)) @ vt).ravel()
    return out


def flatten_descriptors(stack: np.ndarray, g: Geometry) -> np.ndarray:
    """log-Euclidean ベースライン用に記述子をユークリッドベクトルへ平坦化する。

    Args:
        stack: 記述子配列 (N, *shape)
        g: 幾何

    Returns:
        np.ndarray: (N, D) のベクトル配列
    """
    stack = as_stack(stack, g)
    flat_geometry(g)
    if g.tag == "spd":
        return spd_log_vec_batch(stack)
    if g.tag == "grassmann":
        return grassmann_log_vec_batch(stack)
    return stack


def flat_geometry(g: Geometry) -> Geometry:
    """flatten_descriptors の出力が属するユークリッド幾何を返す。"""
    if g.tag == "spd":
        return Geometry(tag="euclidean", dims=g.dims * (g.dims + 1) // 2)
    if g.tag == "grassmann":
        if g.subdim == g.dims:
            raise ConfigError("p", "Grassmann の平坦化には p < d が必要です")
        return Geometry(tag="euclidean", dims=(g.dims - g.subdim) * g.subdim)
    return g
