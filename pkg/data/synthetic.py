"""合成データセットの生成

三つの幾何それぞれについて、クラスごとに隠れたパラメータを持つ記述子集合を生成する。
生成はパラメータとシードだけの純関数で、各クラスの集合の前半を train、後半を test に振り分ける。
"""
import logging

import numpy as np

from handlers.error_handler import ConfigError, NumericalError
from models.data_models import Dataset, DescriptorSet, Geometry

_logger = logging.getLogger(__name__)

# ユークリッド生成器のクラス内混合数
MIXTURE_COMPONENTS = 3
# SPD 生成器の対角ジッター
SPD_JITTER = 1e-3
# Grassmann 生成器の再試行回数
GRASSMANN_RETRIES = 10
_RANK_TOL = 1e-10


def _check_counts(**counts: int) -> None:
    for key, value in counts.items():
        if value < 1:
            raise ConfigError(key, f"1 以上である必要があります: {value}")


def _assemble(geometry: Geometry, per_class: list[list[np.ndarray]]) -> Dataset:
    """クラスごとの記述子配列の列から train/test タグ付きデータセットを作る。"""
    sets = []
    next_id = 0
    for label, arrays in enumerate(per_class):
        n_train = (len(arrays) + 1) // 2
        for k, descriptors in enumerate(arrays):
            sets.append(DescriptorSet(
                id=next_id,
                label=label,
                geometry=geometry,
                descriptors=descriptors,
                split="train" if k < n_train else "test",
            ))
            next_id += 1
    dataset = Dataset(geometry=geometry, sets=sets)
    dataset.check_label_complete()
    _logger.info("合成データセットを生成しました: %s, 集合数=%d", geometry.describe(), len(sets))
    return dataset


def _spread_points(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """互いの距離が 1 以上の点を count 個、棄却法で選ぶ。"""
    side = 2.0 * max(1.0, count ** (1.0 / d))
    points: list[np.ndarray] = []
    attempts = 0
    while len(points) < count:
        attempts += 1
        if attempts > 10000 * count:
            raise NumericalError("混合成分の平均を十分離して配置できませんでした")
        candidate = rng.uniform(0.0, side, size=d)
        if all(np.linalg.norm(candidate - q) >= 1.0 for q in points):
            points.append(candidate)
    return np.asarray(points)


def gen_euclidean(
    classes: int,
    sets_per_class: int,
    per_set: int,
    d: int,
    separation: float,
    seed: int,
) -> Dataset:
    """ユークリッド記述子のデータセットを生成する。

    クラスごとに 3 成分の混合ガウス（共分散 I）を持ち、全成分の平均は互いに
    separation 以上離れる。separation=0 では全クラスが同じ分布になる。

    Args:
        classes: クラス数
        sets_per_class: クラスあたりの集合数（2 以上）
        per_set: 集合あたりの記述子数
        d: 次元
        separation: 成分平均間の最小距離
        seed: 乱数シード

    Returns:
        Dataset: train/test タグ付きのデータセット
    """
    _check_counts(classes=classes, per_set=per_set, d=d)
    if sets_per_class < 2:
        raise ConfigError("sets_per_class", "train と test の両方に集合を置くには 2 以上必要です")
    if separation < 0:
        raise ConfigError("separation", f"0 以上である必要があります: {separation}")
    rng = np.random.default_rng(seed)
    means = separation * _spread_points(classes * MIXTURE_COMPONENTS, d, rng)
    means = means.reshape(classes, MIXTURE_COMPONENTS, d)
    per_class = []
    for c in range(classes):
        arrays = []
        for _ in range(sets_per_class):
            component = rng.integers(MIXTURE_COMPONENTS, size=per_set)
            arrays.append(means[c, component] + rng.standard_normal((per_set, d)))
        per_class.append(arrays)
    return _assemble(Geometry(tag="euclidean", dims=d), per_class)


def gen_spd(classes: int, sets_per_class: int, per_set: int, n: int, seed: int) -> Dataset:
    """SPD 記述子のデータセットを生成する。

    クラス c は隠れた尺度 Σ_c = G_cG_cᵀ + n·I を持ち、各記述子は
    (1/q)Σ_k v_kv_kᵀ + 1e-3·I（v_k ~ N(0, Σ_c)、q = 2n）とする。

    Args:
        classes: クラス数
        sets_per_class: クラスあたりの集合数（2 以上）
        per_set: 集合あたりの記述子数
        n: 行列サイズ
        seed: 乱数シード

    Returns:
        Dataset: train/test タグ付きのデータセット
    """
    _check_counts(classes=classes, per_set=per_set, n=n)
    if sets_per_class < 2:
        raise ConfigError("sets_per_class", "train と test の両方に集合を置くには 2 以上必要です")
    rng = np.random.default_rng(seed)
    q = 2 * n
    jitter = SPD_JITTER * np.eye(n)
    per_class = []
    for _ in range(classes):
        g = rng.standard_normal((n, n))
        chol = np.linalg.cholesky(g @ g.T + n * np.eye(n))
        arrays = []
        for _ in range(sets_per_class):
            v = chol @ rng.standard_normal((per_set, n, q))
            cov = v @ np.swapaxes(v, 1, 2) / q
            arrays.append((cov + np.swapaxes(cov, 1, 2)) / 2.0 + jitter)
        per_class.append(arrays)
    return _assemble(Geometry(tag="spd", dims=n), per_class)


def modified_gram_schmidt(a: np.ndarray) -> np.ndarray:
    """修正 Gram–Schmidt で列を正規直交化する（二回適用して直交性を確保する）。

    Raises:
        NumericalError: 列が一次従属な場合
    """
    q = np.array(a, dtype=np.float64)
    for _ in range(2):
        for j in range(q.shape[1]):
            for i in range(j):
                q[:, j] -= np.dot(q[:, i], q[:, j]) * q[:, i]
            norm = np.linalg.norm(q[:, j])
            if norm <= _RANK_TOL * max(1.0, np.linalg.norm(a[:, j])):
                raise NumericalError("摂動後の行列が階数落ちしています")
            q[:, j] /= norm
    return q


def gen_grassmann(
    classes: int,
    sets_per_class: int,
    per_set: int,
    d: int,
    p: int,
    noise: float,
    seed: int,
) -> Dataset:
    """Grassmann 記述子のデータセットを生成する。

    クラス c は隠れた正規直交基底 B_c を持ち、各記述子は B_c + noise·E を
    修正 Gram–Schmidt で正規直交化したもの。階数落ちしたら最大 10 回まで引き直す。

    Args:
        classes: クラス数
        sets_per_class: クラスあたりの集合数（2 以上）
        per_set: 集合あたりの記述子数
        d: 外側の次元
        p: 部分空間の次元
        noise: 摂動の大きさ
        seed: 乱数シード

    Returns:
        Dataset: train/test タグ付きのデータセット
    """
    _check_counts(classes=classes, per_set=per_set, d=d, p=p)
    if sets_per_class < 2:
        raise ConfigError("sets_per_class", "train と test の両方に集合を置くには 2 以上必要です")
    if p > d:
        raise ConfigError("p", f"p={p} は d={d} 以下である必要があります")
    if noise < 0:
        raise ConfigError("noise", f"0 以上である必要があります: {noise}")
    rng = np.random.default_rng(seed)
    per_class = []
    for _ in range(classes):
        base, _r = np.linalg.qr(rng.standard_normal((d, p)))
        arrays = []
        for _ in range(sets_per_class):
            descriptors = np.empty((per_set, d, p))
            for i in range(per_set):
                for attempt in range(GRASSMANN_RETRIES):
                    try:
                        descriptors[i] = modified_gram_schmidt(base + noise * rng.standard_normal((d, p)))
                        break
                    except NumericalError:
                        _logger.warning("階数落ちのため引き直します（%d 回目）", attempt + 1)
                else:
                    raise NumericalError(f"{GRASSMANN_RETRIES} 回引き直しても階数落ちが解消しませんでした")
            arrays.append(descriptors)
        per_class.append(arrays)
    return _assemble(Geometry(tag="grassmann", dims=d, subdim=p), per_class)
