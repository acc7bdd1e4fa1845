"""カーネルのバンド幅の交差検証"""
import logging
from typing import Sequence

import numpy as np

from evals.metrics import accuracy
from evals.pipeline import PipelineConfig, fit_predict
from handlers.error_handler import ConfigError
from models.data_models import DescriptorSet, Geometry

_logger = logging.getLogger(__name__)


def stratified_folds(labels: Sequence[int], folds: int, seed: int) -> np.ndarray:
    """クラスごとに均等になるよう各集合に分割番号を振る。

    Args:
        labels: 集合のクラスラベル
        folds: 分割数
        seed: 乱数シード

    Returns:
        np.ndarray: 集合ごとの分割番号

    Raises:
        ConfigError: 分割数より少ない集合しか持たないクラスがある場合
    """
    labels = np.asarray(labels)
    if folds < 2 or folds > labels.size:
        raise ConfigError("folds", f"分割数 {folds} は 2 以上かつ集合数以下である必要があります")
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.size, dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < folds:
            raise ConfigError("folds", f"クラス {c} の集合数 {idx.size} が分割数 {folds} より少なく、クラスを含まない分割ができます")
        assignment[rng.permutation(idx)] = np.arange(idx.size) % folds
    return assignment


def cv_bandwidth(
    sets: Sequence[DescriptorSet],
    labels: Sequence[int],
    grid: Sequence[float],
    folds: int,
    seed: int,
    config: PipelineConfig,
    geometry: Geometry,
) -> float:
    """平均分割正解率が最大となる σ を候補から選ぶ（同点は最小の σ）。

    各分割のコードブック用シードは seed から分割ごとに派生させる。

    Args:
        sets: 学習集合
        labels: 集合のクラスラベル
        grid: σ の候補
        folds: 分割数
        seed: 乱数シード
        config: σ 以外のパイプライン設定
        geometry: 記述子の幾何

    Returns:
        float: 選ばれた σ
    """
    if not grid:
        raise ConfigError("grid", "σ の候補が空です")
    labels = np.asarray(labels)
    if labels.size != len(sets):
        raise ConfigError("labels", "ラベル数が集合数と一致しません")
    sets = [s if s.label == int(l) else s.model_copy(update={"label": int(l)}) for s, l in zip(sets, labels)]
    assignment = stratified_folds(labels, folds, seed)
    fold_seeds = [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(folds)]
    best_sigma, best_score = None, -np.inf
    for sigma in sorted(grid):
        scores = []
        for f in range(folds):
            train = [s for s, a in zip(sets, assignment) if a != f]
            test = [s for s, a in zip(sets, assignment) if a == f]
            fold_config = config.model_copy(update={"sigma": float(sigma), "seed": fold_seeds[f]})
            pred = fit_predict(train, test, geometry, fold_config)
            scores.append(accuracy(pred, labels[assignment == f]))
        mean = float(np.mean(scores))
        _logger.info("σ=%g: 平均分割正解率=%.4f", sigma, mean)
        if mean > best_score:
            best_sigma, best_score = float(sigma), mean
    _logger.info("交差検証で σ=%g を選びました（正解率 %.4f）", best_sigma, best_score)
    return best_sigma
