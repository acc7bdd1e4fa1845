"""カーネル k-means による暗黙的コードブック

中心 c_s はメンバー添字リストとしてのみ表し、
d²(φ(x), μ_s) = k(x,x) − (2/N_s)Σ_j k(x,t_j) + (1/N_s²)Σ_{j,l} k(t_j,t_l)
をカーネル値だけから評価する。学習時は M×M のグラム行列を一度だけ計算して使い回す。
"""
import logging
from typing import Sequence

import numpy as np

from codebook.kmeans import run_restarts
from geometry.descriptors import as_stack
from geometry.kernels import gram, kernel_diag, kernel_matrix
from handlers.error_handler import ConfigError, GeometryMismatchError, InconsistentKernelError
from models.data_models import (
    ClusterOptions,
    ExplicitCodebook,
    ImplicitCodebook,
    KernelSpec,
    compute_fingerprint,
)

_logger = logging.getLogger(__name__)


def _one_hot_means(labels: np.ndarray, m: int) -> np.ndarray:
    """(M, m) の行列。列 s はクラスタ s のメンバーに 1/N_s を置く。未所属（-1）は 0。"""
    weights = np.zeros((labels.size, m))
    valid = labels >= 0
    weights[np.flatnonzero(valid), labels[valid]] = 1.0
    counts = weights.sum(axis=0)
    return weights / np.where(counts > 0, counts, 1.0)


def _subsample(descriptors: np.ndarray, opts: ClusterOptions) -> np.ndarray:
    total = descriptors.shape[0]
    if opts.max_samples is None or total <= opts.max_samples:
        return np.arange(total)
    rng = np.random.default_rng([opts.seed, 1])
    keep = np.sort(rng.choice(total, size=opts.max_samples, replace=False))
    _logger.info("学習記述子を %d 個から %d 個に間引きます", total, opts.max_samples)
    return keep


def build_implicit_codebook(
    training: np.ndarray,
    kernel: KernelSpec,
    labels: np.ndarray,
    m: int,
    seed: int = 0,
    distortions: Sequence[float] = (),
    fingerprint: int = 0,
) -> ImplicitCodebook:
    """割り当てから暗黙的コードブックとキャッシュを組み立てる。

    Args:
        training: 保持する学習記述子
        kernel: カーネル仕様
        labels: 学習記述子ごとのクラスタ番号
        m: クラスタ数
        seed: 学習に用いたシード
        distortions: 歪みの履歴
        fingerprint: フィンガープリント

    Returns:
        ImplicitCodebook: メンバー行和と中心の自己カーネル値をキャッシュしたコードブック
    """
    members = [np.flatnonzero(labels == s) for s in range(m)]
    self_kernels = np.empty(m)
    row_sums = []
    for s, idx in enumerate(members):
        sums = gram(training[idx], kernel).values.sum(axis=1)
        row_sums.append(sums)
        self_kernels[s] = sums.sum() / float(idx.size) ** 2
    return ImplicitCodebook(
        training=training,
        kernel=kernel,
        members=members,
        self_kernels=self_kernels,
        row_sums=row_sums,
        seed=seed,
        distortions=tuple(distortions),
        fingerprint=fingerprint,
    )


def kernel_kmeans_fit(descriptors, k: KernelSpec, m: int, opts: ClusterOptions) -> ImplicitCodebook:
    """カーネル k-means で暗黙的コードブックを学習する。

    Args:
        descriptors: 学習記述子 (M, *shape)
        k: カーネル仕様
        m: クラスタ数
        opts: 反復設定（max_samples を超える場合は一様に間引く）

    Returns:
        ImplicitCodebook: 学習したコードブック

    Raises:
        ConfigError: m が学習記述子数を超える場合
        GeometryMismatchError: 記述子がカーネルの幾何と一致しない場合
    """
    try:
        descriptors = as_stack(descriptors, k.geometry)
    except ValueError:
        raise GeometryMismatchError(k.geometry.describe(), f"shape {np.shape(descriptors)}") from None
    keep = _subsample(descriptors, opts)
    training = descriptors[keep]
    n = training.shape[0]
    if m < 1 or m > n:
        raise ConfigError("m", f"クラスタ数 {m} が学習記述子数 {n} を超えています")

    kmat = gram(training, k).values
    diag = np.diag(kmat).copy()

    def dist_to(idx: int) -> np.ndarray:
        return diag - 2.0 * kmat[:, idx] + kmat[idx, idx]

    def distances(labels: np.ndarray) -> np.ndarray:
        weights = _one_hot_means(labels, m)
        cross = kmat @ weights
        self_k = np.einsum("is,is->s", weights, cross)
        return diag[:, np.newaxis] - 2.0 * cross + self_k[np.newaxis, :]

    result = run_restarts(n, m, dist_to, distances, opts)
    fingerprint = compute_fingerprint(
        "kernel-kmeans", k.family, k.sigma, k.geometry.describe(), opts.seed, keep, training
    )
    _logger.info("カーネル k-means 学習完了: kernel=%s, M=%d, m=%d, 歪み=%.6g", k.family, n, m, result.distortion)
    return build_implicit_codebook(
        training, k, result.labels, m,
        seed=opts.seed,
        distortions=result.distortions,
        fingerprint=fingerprint,
    )


def _check_cluster(s: int, cb: ImplicitCodebook) -> None:
    if not 0 <= s < cb.m:
        raise IndexError(f"クラスタ番号 {s} は範囲外です（m={cb.m}）")


def centroid_kernels(x, cb: ImplicitCodebook) -> np.ndarray:
    """各記述子と各中心のカーネル値 k(x_i, c_s) = (1/N_s)Σ_j k(x_i, t_{s,j}) を返す。

    Args:
        x: 記述子配列 (N, *shape) または記述子一つ

    Returns:
        np.ndarray: (N, m) の行列
    """
    kx = kernel_matrix(x, cb.training, cb.kernel)
    out = np.empty((kx.shape[0], cb.m))
    for s, idx in enumerate(cb.members):
        out[:, s] = kx[:, idx].mean(axis=1)
    return out


def centroid_kernel(x, s: int, cb: ImplicitCodebook) -> float:
    """記述子 x と中心 c_s のカーネル値。

    Raises:
        IndexError: クラスタ番号が範囲外の場合
    """
    _check_cluster(s, cb)
    kx = kernel_matrix(x, cb.member_descriptors(s), cb.kernel)
    if kx.shape[0] != 1:
        raise ValueError("centroid_kernel は記述子一つを受け取ります")
    return float(kx[0].mean())


def centroid_self_kernel(s: int, cb: ImplicitCodebook) -> float:
    """キャッシュ済みの k(c_s, c_s) = (1/N_s²)ΣΣ k(t_i, t_j)。"""
    _check_cluster(s, cb)
    return float(cb.self_kernels[s])


def center_distances(x, cb: ImplicitCodebook) -> np.ndarray:
    """各記述子から各中心へのヒルベルト空間の二乗距離 (N, m)。"""
    diag = kernel_diag(x, cb.kernel)
    dist = diag[:, np.newaxis] - 2.0 * centroid_kernels(x, cb) + cb.self_kernels[np.newaxis, :]
    scale = np.maximum(1.0, np.abs(diag))[:, np.newaxis]
    if np.any(dist < -1e-9 * scale):
        raise InconsistentKernelError(float(dist.min()))
    return dist


def assign_kernel_batch(x, cb: ImplicitCodebook) -> np.ndarray:
    """記述子配列を最も近い暗黙的中心に割り当てる（同距離は小さい番号）。"""
    return np.argmin(center_distances(x, cb), axis=1)


def assign_kernel(x, cb: ImplicitCodebook) -> int:
    """記述子一つを最も近い暗黙的中心に割り当てる。"""
    labels = assign_kernel_batch(x, cb)
    if labels.size != 1:
        raise ValueError("assign_kernel は記述子一つを受け取ります")
    return int(labels[0])


def mean_codebook(cb: ImplicitCodebook) -> ExplicitCodebook:
    """ユークリッド記述子の暗黙的コードブックを、メンバー平均を中心とする明示的コードブックに変換する。

    Raises:
        GeometryMismatchError: ユークリッド幾何でない場合
    """
    if cb.geometry.tag != "euclidean":
        raise GeometryMismatchError("euclidean", cb.geometry.tag)
    centers = np.vstack([cb.member_descriptors(s).mean(axis=0) for s in range(cb.m)])
    return ExplicitCodebook(centers=centers, fingerprint=0, distortions=cb.distortions, labels=cb.labels())
