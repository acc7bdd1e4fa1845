"""ユークリッド k-means による明示的コードブックの学習と割り当て

k-means++ による初期化と Lloyd 反復の枠組みはカーネル k-means と共有する。
距離行列の作り方だけを差し替えることで、線形カーネルのカーネル k-means と
同じ割り当て系列をたどる。
"""
import logging
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from handlers.error_handler import ConfigError, DimensionMismatchError, DistortionIncreaseError
from models.data_models import ClusterOptions, ExplicitCodebook

_logger = logging.getLogger(__name__)

# 歪みの単調減少チェックの許容値
_MONOTONE_TOL = 1e-12

# 点 idx から全点への二乗距離 (n,) を返す関数
DistanceToPoint = Callable[[int], np.ndarray]
# 割り当てから全点×全クラスタの二乗距離 (n, m) を返す関数
DistanceToClusters = Callable[[np.ndarray], np.ndarray]


class LloydResult:
    """Lloyd 反復の結果（最終割り当てと歪みの履歴）"""

    def __init__(self, labels: np.ndarray, distortions: list[float]) -> None:
        self.labels = labels
        self.distortions = distortions

    @property
    def distortion(self) -> float:
        return self.distortions[-1]


def kmeanspp_seeds(n: int, m: int, dist_to: DistanceToPoint, rng: np.random.Generator) -> np.ndarray:
    """k-means++ で初期中心の添字を選ぶ。

    Args:
        n: 点の数
        m: クラスタ数
        dist_to: 点 idx から全点への二乗距離を返す関数
        rng: 乱数生成器

    Returns:
        np.ndarray: 長さ m の添字配列
    """
    seeds = [int(rng.integers(n))]
    closest = np.maximum(dist_to(seeds[0]), 0.0)
    for _ in range(1, m):
        total = closest.sum()
        if total <= 0.0:
            raise ConfigError("m", "重複しない点の数がクラスタ数より少ないため初期化できません")
        nxt = int(rng.choice(n, p=closest / total))
        seeds.append(nxt)
        closest = np.minimum(closest, np.maximum(dist_to(nxt), 0.0))
    return np.asarray(seeds, dtype=np.int64)


def _refill_empty(labels: np.ndarray, dist: np.ndarray, m: int) -> np.ndarray:
    """空のクラスタに、現在の中心から最も遠い点を移す。"""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=m)
    if counts.min() > 0:
        return labels
    own = dist[np.arange(labels.size), labels].copy()
    for s in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        candidates = np.where(movable, own, -np.inf)
        i = int(np.argmax(candidates))
        _logger.warning("空のクラスタ %d を点 %d（距離 %.6g）で補充します", s, i, own[i])
        counts[labels[i]] -= 1
        counts[s] += 1
        labels[i] = s
        own[i] = -np.inf
    return labels


def lloyd(
    n: int,
    m: int,
    seeds: np.ndarray,
    distances: DistanceToClusters,
    opts: ClusterOptions,
) -> LloydResult:
    """割り当てと中心更新を交互に行う Lloyd 反復。

    中心はラベル配列で表し、距離の計算は distances に委ねる。初期中心は
    seeds の各点だけを含む単一要素クラスタとして扱う。

    Args:
        n: 点の数
        m: クラスタ数
        seeds: 初期中心の添字
        distances: 割り当て（-1 は未所属）から (n, m) の二乗距離を返す関数
        opts: 反復設定

    Returns:
        LloydResult: 空クラスタを含まない最終割り当てと歪みの履歴
    """
    init = np.full(n, -1, dtype=np.int64)
    init[seeds] = np.arange(m)
    dist = distances(init)
    history: list[float] = []
    prev_labels = None
    for it in range(opts.max_iters):
        labels = np.argmin(dist, axis=1)
        distortion = float(dist[np.arange(n), labels].sum())
        if history and distortion > history[-1] + _MONOTONE_TOL * max(1.0, history[-1]):
            raise DistortionIncreaseError(history[-1], distortion, it)
        converged = prev_labels is not None and np.array_equal(labels, prev_labels)
        if history and not converged:
            converged = history[-1] - distortion < opts.rel_tol * history[-1]
        history.append(distortion)
        _logger.debug("Lloyd 反復 %d: 歪み=%.12g", it, distortion)
        if converged:
            break
        labels = _refill_empty(labels, dist, m)
        prev_labels = labels
        dist = distances(labels)
    labels = _refill_empty(labels, dist, m)
    return LloydResult(labels, history)


def run_restarts(
    n: int,
    m: int,
    dist_to: DistanceToPoint,
    distances: DistanceToClusters,
    opts: ClusterOptions,
) -> LloydResult:
    """k-means++ 初期化と Lloyd 反復を opts.restarts 回行い、歪み最小の結果を返す。"""
    rng = np.random.default_rng(opts.seed)
    best = None
    for attempt in range(opts.restarts):
        seeds = kmeanspp_seeds(n, m, dist_to, rng)
        result = lloyd(n, m, seeds, distances, opts)
        _logger.debug("再実行 %d: 歪み=%.12g, 反復=%d", attempt, result.distortion, len(result.distortions))
        if best is None or result.distortion < best.distortion:
            best = result
    return best


def _centers_from_labels(points: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    centers = np.empty((m, points.shape[1]))
    for s in range(m):
        centers[s] = points[labels == s].mean(axis=0)
    return centers


def kmeans_fit(points, m: int, opts: ClusterOptions, fingerprint: int = 0) -> ExplicitCodebook:
    """ユークリッド k-means で明示的コードブックを学習する。

    Args:
        points: 点の配列 (N, d)
        m: クラスタ数
        opts: 反復設定
        fingerprint: 点を作った写像のフィンガープリント（生の記述子なら 0）

    Returns:
        ExplicitCodebook: 学習したコードブック

    Raises:
        ConfigError: m が重複しない点の数を超える場合
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionMismatchError("(N, d)", points.shape)
    n = points.shape[0]
    if m < 1 or m > n or m > np.unique(points, axis=0).shape[0]:
        raise ConfigError("m", f"クラスタ数 {m} が重複しない点の数を超えています")

    def dist_to(idx: int) -> np.ndarray:
        return cdist(points, points[idx:idx + 1], "sqeuclidean")[:, 0]

    def distances(labels: np.ndarray) -> np.ndarray:
        return cdist(points, _centers_from_labels(points, labels, m), "sqeuclidean")

    result = run_restarts(n, m, dist_to, distances, opts)
    centers = _centers_from_labels(points, result.labels, m)
    _logger.info("k-means 学習完了: N=%d, m=%d, 歪み=%.6g", n, m, result.distortion)
    return ExplicitCodebook(
        centers=centers,
        fingerprint=fingerprint,
        distortions=tuple(result.distortions),
        labels=result.labels,
    )


def assign_explicit_batch(points, cb: ExplicitCodebook) -> np.ndarray:
    """点の配列をそれぞれ最も近い中心に割り当てる（同距離は小さい番号）。"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != cb.dim:
        raise DimensionMismatchError(cb.dim, points.shape[1])
    return np.argmin(cdist(points, cb.centers, "sqeuclidean"), axis=1)


def assign_explicit(v, cb: ExplicitCodebook) -> int:
    """点 v を最も近い中心に割り当てる。

    Raises:
        DimensionMismatchError: 次元が一致しない場合
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError((cb.dim,), v.shape)
    return int(assign_explicit_batch(v[np.newaxis], cb)[0])
