"""カーネル関数とグラム行列

四つのカーネル族（ユークリッド RBF・線形・Stein・射影 RBF）の評価と、
カーネル値だけから求めるヒルベルト空間の二乗距離を提供する。

ペア単位の関数は評価順を固定しているため k(x, y) = k(y, x) が厳密に成り立つ。
行列版（kernel_matrix / gram）も対称な計算のみで構成している。
"""
import functools
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from geometry.descriptors import as_stack, validate
from handlers.error_handler import (
    DimensionMismatchError,
    GeometryMismatchError,
    InconsistentKernelError,
    InvalidDescriptorError,
    NonSpdError,
)
from models.data_models import Geometry, GramMatrix, KernelSpec

_logger = logging.getLogger(__name__)

# 二乗距離の負側許容値
NEGATIVE_DIST_TOL = 1e-9

# Stein カーネルの一括 Cholesky で一度に扱う行列要素数の上限
_STEIN_CHUNK_ELEMENTS = 4_000_000


# ============ ペア単位のカーネル ============

def _euclidean_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise DimensionMismatchError(x.shape, y.shape)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidDescriptorError("non-finite")
    return x, y


def rbf_kernel(x, y, sigma: float) -> float:
    """ユークリッド RBF カーネル exp(−‖x−y‖²/(2σ²))。

    Args:
        x: ベクトル (d,)
        y: ベクトル (d,)
        sigma: バンド幅 σ > 0

    Returns:
        float: (0, 1] のカーネル値
    """
    x, y = _euclidean_pair(x, y)
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma ** 2)))


def linear_kernel(x, y) -> float:
    """線形カーネル xᵀy。"""
    x, y = _euclidean_pair(x, y)
    return float(np.dot(x, y))


def _chol_logdet(a: np.ndarray, what: str) -> float:
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NonSpdError(what) from None
    return float(2.0 * np.sum(np.log(np.diagonal(chol))))


def _spd_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise DimensionMismatchError(a.shape, b.shape)
    return a, b


def stein_divergence(a, b) -> float:
    """Stein ダイバージェンス ln det((A+B)/2) − ½ ln det(AB)。

    行列式は Cholesky 分解の対数行列式から求める。

    Raises:
        NonSpdError: A, B, (A+B)/2 のいずれかの Cholesky 分解に失敗した場合
    """
    a, b = _spd_pair(a, b)
    ld_mid = _chol_logdet((a + b) / 2.0, "(A+B)/2")
    ld_a = _chol_logdet(a, "A")
    ld_b = _chol_logdet(b, "B")
    return max(0.0, ld_mid - 0.5 * (ld_a + ld_b))


def _warn_stein_sigma(sigma: float, n: int) -> None:
    if sigma < (n - 1) / 2.0 and not float(2.0 * sigma).is_integer():
        _logger.warning(
            "Stein カーネルの σ=%g は正定値性が保証される範囲外です（n=%d では σ >= %.1f または半整数）",
            sigma, n, (n - 1) / 2.0,
        )


@functools.lru_cache(maxsize=None)
def _warn_stein_sigma_once(sigma: float, n: int) -> None:
    _warn_stein_sigma(sigma, n)


def stein_kernel(a, b, sigma: float) -> float:
    """Stein カーネル exp(−σ·δ_S(A, B))。"""
    a, b = _spd_pair(a, b)
    _warn_stein_sigma(sigma, a.shape[0])
    return float(np.exp(-sigma * stein_divergence(a, b)))


def _projector(u: np.ndarray) -> np.ndarray:
    return u @ np.swapaxes(u, -1, -2)


def projection_kernel(u, v, sigma: float) -> float:
    """射影 RBF カーネル exp(σ‖UᵀV‖_F²)。指数の符号は正のまま扱う。

    ‖UᵀV‖_F² は射影行列の Frobenius 内積 ⟨UUᵀ, VVᵀ⟩ として評価する。

    Raises:
        DimensionMismatchError: 形状が一致しない場合
        InvalidDescriptorError: 列が正規直交でない場合
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 2 or u.shape != v.shape:
        raise DimensionMismatchError(u.shape, v.shape)
    g = Geometry(tag="grassmann", dims=u.shape[0], subdim=u.shape[1])
    for w in (u, v):
        diagnostic = validate(w, g)
        if diagnostic is not None:
            raise InvalidDescriptorError(diagnostic)
    return float(np.exp(sigma * np.sum(_projector(u) * _projector(v))))


def kernel_value(x, y, k: KernelSpec) -> float:
    """KernelSpec に従って k(x, y) を一つ評価する。"""
    if k.family == "rbf":
        return rbf_kernel(x, y, k.sigma)
    if k.family == "linear":
        return linear_kernel(x, y)
    if k.family == "stein":
        return stein_kernel(x, y, k.sigma)
    return projection_kernel(x, y, k.sigma)


def hilbert_dist_sq(kxx: float, kxy: float, kyy: float) -> float:
    """カーネル値だけから ‖φ(x) − φ(y)‖² を求める。

    丸め誤差による −1e-9 までの負値は 0 に切り上げる。

    Raises:
        ValueError: 入力が有限でない場合
        InconsistentKernelError: 結果が −1e-9 を下回る場合
    """
    if not all(np.isfinite(v) for v in (kxx, kxy, kyy)):
        raise ValueError("カーネル値が有限ではありません")
    value = kxx - 2.0 * kxy + kyy
    if value < -NEGATIVE_DIST_TOL:
        raise InconsistentKernelError(value)
    return max(0.0, float(value))


# ============ 行列版 ============

def _check_geometry(x: np.ndarray, k: KernelSpec) -> np.ndarray:
    try:
        return as_stack(x, k.geometry)
    except DimensionMismatchError:
        actual = np.asarray(x).shape
        raise GeometryMismatchError(k.geometry.describe(), f"shape {actual}") from None


def _stein_logdets(stack: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(stack)
    except np.linalg.LinAlgError:
        raise NonSpdError("descriptor") from None
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


def _stein_pair_values(
    x: np.ndarray, y: np.ndarray, rows: np.ndarray, cols: np.ndarray,
    ld_x: np.ndarray, ld_y: np.ndarray, sigma: float,
) -> np.ndarray:
    """添字ペア (rows[i], cols[i]) ごとの Stein カーネル値を一括計算する。"""
    n = x.shape[1]
    chunk = max(1, _STEIN_CHUNK_ELEMENTS // (n * n))
    out = np.empty(rows.size)
    for start in range(0, rows.size, chunk):
        r = rows[start:start + chunk]
        c = cols[start:start + chunk]
        mid = (x[r] + y[c]) / 2.0
        ld_mid = _stein_logdets(mid)
        div = np.maximum(0.0, ld_mid - 0.5 * (ld_x[r] + ld_y[c]))
        out[start:start + chunk] = np.exp(-sigma * div)
    return out


def kernel_matrix(x, y, k: KernelSpec) -> np.ndarray:
    """記述子配列どうしのカーネル行列 [k(x_i, y_j)] を計算する。

    Args:
        x: 記述子配列 (N, *shape)
        y: 記述子配列 (M, *shape)
        k: カーネル仕様

    Returns:
        np.ndarray: (N, M) の行列

    Raises:
        GeometryMismatchError: 記述子の形状がカーネルの幾何と一致しない場合
    """
    x = _check_geometry(x, k)
    y = _check_geometry(y, k)
    if k.family == "rbf":
        return np.exp(-cdist(x, y, "sqeuclidean") * k.gamma)
    if k.family == "linear":
        return x @ y.T
    if k.family == "stein":
        _warn_stein_sigma_once(k.sigma, k.geometry.dims)
        rows, cols = np.meshgrid(np.arange(x.shape[0]), np.arange(y.shape[0]), indexing="ij")
        values = _stein_pair_values(
            x, y, rows.ravel(), cols.ravel(), _stein_logdets(x), _stein_logdets(y), k.sigma
        )
        return values.reshape(x.shape[0], y.shape[0])
    px = _projector(x).reshape(x.shape[0], -1)
    py = _projector(y).reshape(y.shape[0], -1)
    return np.exp(k.sigma * (px @ py.T))


def kernel_diag(x, k: KernelSpec) -> np.ndarray:
    """k(x_i, x_i) の列を計算する。"""
    x = _check_geometry(x, k)
    if k.family in ("rbf", "stein"):
        return np.ones(x.shape[0])
    if k.family == "linear":
        return np.einsum("ij,ij->i", x, x)
    p = _projector(x).reshape(x.shape[0], -1)
    return np.exp(k.sigma * np.einsum("ij,ij->i", p, p))


def _from_upper(n: int, rows: np.ndarray, cols: np.ndarray, upper: np.ndarray) -> np.ndarray:
    values = np.zeros((n, n))
    values[rows, cols] = upper
    values[cols, rows] = upper
    return values


def gram(descriptors, k: KernelSpec, item_ids: Optional[Sequence[int]] = None) -> GramMatrix:
    """記述子間のグラム行列を作る。

    カーネル値は上三角（対角を含む）だけ評価して下三角に写す。線形・射影カーネルの
    内積は行列積でまとめて求める。

    Args:
        descriptors: 記述子配列 (N, *shape)
        k: カーネル仕様
        item_ids: 行の識別子（省略時は 0..N−1）

    Returns:
        GramMatrix: 厳密に対称な N×N 行列

    Raises:
        GeometryMismatchError: 記述子の形状がカーネルの幾何と一致しない場合
    """
    x = _check_geometry(descriptors, k)
    n = x.shape[0]
    _logger.debug("グラム行列を計算します: kernel=%s, N=%d", k.family, n)
    rows, cols = np.triu_indices(n)
    if k.family == "rbf":
        values = np.exp(-squareform(pdist(x, "sqeuclidean")) * k.gamma)
    elif k.family == "linear":
        values = _from_upper(n, rows, cols, (x @ x.T)[rows, cols])
    elif k.family == "stein":
        _warn_stein_sigma_once(k.sigma, k.geometry.dims)
        ld = _stein_logdets(x)
        values = _from_upper(n, rows, cols, _stein_pair_values(x, x, rows, cols, ld, ld, k.sigma))
    else:
        p = _projector(x).reshape(n, -1)
        values = _from_upper(n, rows, cols, np.exp(k.sigma * (p @ p.T)[rows, cols]))
    ids = tuple(range(n)) if item_ids is None else tuple(int(i) for i in item_ids)
    return GramMatrix(values=values, item_ids=ids)
