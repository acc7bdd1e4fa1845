"""厳密な kVLAD

符号 δ_s(X) = Σ_{i∈I_s} (φ(c_s) − φ(x_i)) は明示的には作らず、二つの集合の内積を
カーネル値だけから展開して評価する。

    ⟨δ_s(X), δ_s(Y)⟩ = Σ_{i∈I_s(X)} Σ_{j∈I_s(Y)} k(x_i, y_j) + n_s(X) n_s(Y) k(c_s, c_s)
                       − n_s(Y) Σ_i k(x_i, c_s) − n_s(X) Σ_j k(y_j, c_s)
"""
import logging
from typing import Sequence

import numpy as np

from codebook.kernel_kmeans import centroid_kernels
from geometry.descriptors import as_stack
from geometry.kernels import hilbert_dist_sq, kernel_diag, kernel_matrix
from handlers.error_handler import GeometryMismatchError, InconsistentKernelError
from models.data_models import CrossGram, DescriptorSet, GramMatrix, ImplicitCodebook

_logger = logging.getLogger(__name__)

# ブロックのノルム二乗をゼロとみなす相対閾値
_ZERO_NORM_TOL = 1e-12
# ブロックのノルム二乗の負側許容値（相対）
_NEGATIVE_TOL = 1e-9


class SetStatistics:
    """集合一つ分の割り当てとブロックごとの集計値"""

    def __init__(self, descriptors: np.ndarray, cb: ImplicitCodebook) -> None:
        if descriptors.shape[0] == 0:
            raise ValueError("記述子集合が空です")
        self.descriptors = descriptors
        ck = centroid_kernels(descriptors, cb)
        diag = kernel_diag(descriptors, cb.kernel)
        dist = diag[:, np.newaxis] - 2.0 * ck + cb.self_kernels[np.newaxis, :]
        self.labels = np.argmin(dist, axis=1)
        # indicator[i, s] = a_s^i
        self.indicator = np.zeros((descriptors.shape[0], cb.m))
        self.indicator[np.arange(descriptors.shape[0]), self.labels] = 1.0
        self.counts = self.indicator.sum(axis=0)
        self.centroid_sums = np.einsum("is,is->s", self.indicator, ck)
        kxx = kernel_matrix(descriptors, descriptors, cb.kernel)
        pair_sums = np.einsum("is,ij,js->s", self.indicator, kxx, self.indicator)
        raw = pair_sums + self.counts ** 2 * cb.self_kernels - 2.0 * self.counts * self.centroid_sums
        scale = np.abs(pair_sums) + self.counts ** 2 * np.abs(cb.self_kernels) + 2.0 * self.counts * np.abs(self.centroid_sums)
        if np.any(raw < -_NEGATIVE_TOL * np.maximum(scale, 1.0)):
            raise InconsistentKernelError(float(raw.min()))
        # ‖δ_s(X)‖² とゼロ判定
        self.norms_sq = np.maximum(raw, 0.0)
        self.zero = (self.counts == 0) | (self.norms_sq <= _ZERO_NORM_TOL * np.maximum(scale, 1e-300))

    @property
    def norms(self) -> np.ndarray:
        return np.sqrt(self.norms_sq)


def _descriptors(x: DescriptorSet | np.ndarray, cb: ImplicitCodebook) -> np.ndarray:
    if isinstance(x, DescriptorSet):
        if x.geometry != cb.geometry:
            raise GeometryMismatchError(cb.geometry.describe(), x.geometry.describe())
        return x.descriptors
    try:
        return as_stack(x, cb.geometry)
    except ValueError:
        raise GeometryMismatchError(cb.geometry.describe(), f"shape {np.shape(x)}") from None


def set_statistics(x: DescriptorSet | np.ndarray, cb: ImplicitCodebook) -> SetStatistics:
    """集合の割り当てとブロック集計を計算する。

    Raises:
        ValueError: 記述子集合が空の場合
        GeometryMismatchError: 幾何がコードブックと一致しない場合
    """
    return SetStatistics(_descriptors(x, cb), cb)


def block_inner(sx: SetStatistics, sy: SetStatistics, cb: ImplicitCodebook) -> np.ndarray:
    """ブロックごとの内積 ⟨δ_s(X), δ_s(Y)⟩ の列 (m,) を返す。"""
    kxy = kernel_matrix(sx.descriptors, sy.descriptors, cb.kernel)
    pair = np.einsum("is,ij,js->s", sx.indicator, kxy, sy.indicator)
    return (
        pair
        + sx.counts * sy.counts * cb.self_kernels
        - sy.counts * sx.centroid_sums
        - sx.counts * sy.centroid_sums
    )


def _combine(blocks: np.ndarray, sx: SetStatistics, sy: SetStatistics, normalized: bool) -> float:
    if not normalized:
        return float(blocks.sum())
    usable = ~(sx.zero | sy.zero)
    if not usable.any():
        return 0.0
    return float(np.sum(blocks[usable] / (sx.norms[usable] * sy.norms[usable])))


def _self_inner(sx: SetStatistics, normalized: bool) -> float:
    if not normalized:
        return float(sx.norms_sq.sum())
    usable = ~sx.zero
    return float(np.sum(sx.norms_sq[usable] / (sx.norms[usable] * sx.norms[usable])))


def inner_from_statistics(sx: SetStatistics, sy: SetStatistics, cb: ImplicitCodebook, normalized: bool = False) -> float:
    """事前計算した集計値から kVLAD 内積を求める。"""
    if sx is sy:
        return _self_inner(sx, normalized)
    return _combine(block_inner(sx, sy, cb), sx, sy, normalized)


def kvlad_inner(x, y, cb: ImplicitCodebook, normalized: bool = False) -> float:
    """二つの記述子集合の kVLAD 内積。

    Args:
        x: DescriptorSet または記述子配列
        y: DescriptorSet または記述子配列
        cb: 暗黙的コードブック
        normalized: True ならブロックごとのコサイン（ノルム 0 のブロックは 0）の和

    Returns:
        float: 内積

    Raises:
        ValueError: 記述子集合が空の場合
        GeometryMismatchError: 幾何がコードブックと一致しない場合
    """
    sx = set_statistics(x, cb)
    if y is x:
        return inner_from_statistics(sx, sx, cb, normalized)
    return inner_from_statistics(sx, set_statistics(y, cb), cb, normalized)


def kvlad_dist_sq(x, y, cb: ImplicitCodebook, normalized: bool = False) -> float:
    """kVLAD 符号間の二乗距離 ⟨X,X⟩ − 2⟨X,Y⟩ + ⟨Y,Y⟩。

    Raises:
        InconsistentKernelError: 結果が −1e-9 を下回る場合
    """
    sx = set_statistics(x, cb)
    sy = sx if y is x else set_statistics(y, cb)
    return hilbert_dist_sq(
        inner_from_statistics(sx, sx, cb, normalized),
        inner_from_statistics(sx, sy, cb, normalized),
        inner_from_statistics(sy, sy, cb, normalized),
    )


def _set_ids(sets: Sequence, offset: int = 0) -> tuple[int, ...]:
    return tuple(s.id if isinstance(s, DescriptorSet) else offset + i for i, s in enumerate(sets))


def kvlad_gram(sets: Sequence, cb: ImplicitCodebook, normalized: bool = False) -> GramMatrix:
    """集合間の kVLAD グラム行列。上三角だけを計算して鏡映する。

    Args:
        sets: DescriptorSet（または記述子配列）の列
        cb: 暗黙的コードブック
        normalized: ブロック正規化した内積を使うか

    Returns:
        GramMatrix: 集合 ID を行の識別子とする対称行列
    """
    if not sets:
        raise ValueError("集合が一つもありません")
    stats = [set_statistics(s, cb) for s in sets]
    n = len(stats)
    values = np.empty((n, n))
    for i in range(n):
        values[i, i] = inner_from_statistics(stats[i], stats[i], cb, normalized)
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = inner_from_statistics(stats[i], stats[j], cb, normalized)
    _logger.info("kVLAD グラム行列を計算しました: 集合数=%d, normalized=%s", n, normalized)
    return GramMatrix(values=values, item_ids=_set_ids(sets))


def kvlad_cross_gram(rows: Sequence, cols: Sequence, cb: ImplicitCodebook, normalized: bool = False) -> CrossGram:
    """評価集合（行）× 学習集合（列）の kVLAD 内積行列。"""
    row_stats = [set_statistics(s, cb) for s in rows]
    col_stats = [set_statistics(s, cb) for s in cols]
    values = np.array([
        [inner_from_statistics(sr, sc, cb, normalized) for sc in col_stats]
        for sr in row_stats
    ])
    return CrossGram(values=values, row_ids=_set_ids(rows), col_ids=_set_ids(cols))


def kvlad_rbf_gram(gram: GramMatrix, gamma: float) -> GramMatrix:
    """kVLAD グラムの上に RBF を重ねた二層カーネル exp(−γ·dist²) を作る。

    Args:
        gram: kVLAD グラム行列
        gamma: γ > 0

    Returns:
        GramMatrix: 対角が 1 の対称行列
    """
    if gamma <= 0:
        raise ValueError("gamma は正である必要があります")
    diag = np.diag(gram.values)
    dist = diag[:, np.newaxis] - 2.0 * gram.values + diag[np.newaxis, :]
    if np.any(dist < -1e-9):
        raise InconsistentKernelError(float(dist.min()))
    dist = np.maximum(dist, 0.0)
    np.fill_diagonal(dist, 0.0)
    values = np.exp(-gamma * dist)
    values = np.triu(values) + np.triu(values, k=1).T
    return GramMatrix(values=values, item_ids=gram.item_ids)
