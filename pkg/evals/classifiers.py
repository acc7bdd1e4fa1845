"""リッジ回帰による分類器

明示的な符号には一対他リッジ回帰、事前計算したグラム行列にはカーネルリッジ回帰を使う。
どちらもバイアスは正則化せず、学習データの中心化で扱う。そのため線形カーネルの
グラム行列を与えたカーネルリッジは、同じ λ の主形式リッジと同じラベルを予測する。
"""
import logging
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from handlers.error_handler import ConfigError, DimensionMismatchError, FingerprintMismatchError, NumericalError
from models.data_models import (
    CodeMatrix,
    CrossGram,
    GramMatrix,
    KernelRidgeModel,
    RidgeModel,
    VladCode,
    compute_fingerprint,
)

_logger = logging.getLogger(__name__)


def code_values(codes: Sequence[VladCode] | CodeMatrix | np.ndarray) -> np.ndarray:
    """符号の列・CodeMatrix・配列から (N, D) 行列を取り出す。

    Raises:
        DimensionMismatchError: 符号長が揃っていない場合
    """
    if isinstance(codes, CodeMatrix):
        return codes.values
    if isinstance(codes, np.ndarray):
        return np.atleast_2d(codes.astype(np.float64))
    vectors = [c.vector for c in codes]
    lengths = {v.size for v in vectors}
    if len(lengths) != 1:
        raise DimensionMismatchError("同一の符号長", sorted(lengths))
    return np.vstack(vectors)


def _targets(labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ConfigError("labels", "クラスが 2 種類以上必要です")
    onehot = (labels[:, np.newaxis] == classes[np.newaxis, :]).astype(np.float64)
    return classes, onehot


def _solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(a, lower=True), b)
    except LinAlgError:
        raise NumericalError("正則化後の連立方程式が正定値ではありません") from None


def _ids_fingerprint(ids: Sequence[int]) -> int:
    return compute_fingerprint(tuple(int(i) for i in ids))


def ridge_train(codes, labels: Sequence[int], lam: float) -> RidgeModel:
    """一対他リッジ回帰を学習する。

    D <= N なら (XcᵀXc + λI)W = XcᵀYc、D > N なら双対形 W = Xcᵀ(XcXcᵀ + λI)^{-1}Yc を
    Cholesky 分解で解く（Xc, Yc は中心化した符号と one-hot 目標）。

    Args:
        codes: 符号の列・CodeMatrix・(N, D) 配列
        labels: クラスラベル
        lam: 正則化係数 λ > 0

    Returns:
        RidgeModel: 最終列をバイアスとする (C, D+1) の重み

    Raises:
        ConfigError: λ <= 0 またはクラスが 1 種類しかない場合
    """
    if lam <= 0:
        raise ConfigError("lambda", f"λ は正である必要があります: {lam}")
    x = code_values(codes)
    classes, y = _targets(labels)
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(x.shape[0], y.shape[0])
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    n, d = xc.shape
    if d <= n:
        w = _solve_spd(xc.T @ xc + lam * np.eye(d), xc.T @ yc)
    else:
        w = xc.T @ _solve_spd(xc @ xc.T + lam * np.eye(n), yc)
    bias = y_mean - x_mean @ w
    _logger.info("リッジ回帰を学習しました: N=%d, D=%d, C=%d, λ=%g", n, d, classes.size, lam)
    return RidgeModel(weights=np.hstack([w.T, bias[:, np.newaxis]]), lam=lam, classes=classes)


def ridge_scores(model: RidgeModel, codes) -> np.ndarray:
    """クラスごとのスコア (N, C) を返す。"""
    x = code_values(codes)
    if x.shape[1] != model.dim:
        raise DimensionMismatchError(model.dim, x.shape[1])
    return x @ model.weights[:, :-1].T + model.weights[:, -1]


def ridge_predict(model: RidgeModel, codes) -> np.ndarray:
    """スコア最大のクラスを予測する（同点は小さいクラス番号）。

    Raises:
        DimensionMismatchError: 符号長が学習時と異なる場合
    """
    return model.classes[np.argmax(ridge_scores(model, codes), axis=1)]


def kridge_train(gram: GramMatrix, labels: Sequence[int], lam: float) -> KernelRidgeModel:
    """事前計算したグラム行列でカーネルリッジ回帰を学習する。

    中心化したグラム Kc = HKH について (Kc + λI)A = HY を解く。

    Args:
        gram: 学習項目間の対称グラム行列
        labels: 学習項目のクラスラベル（gram の行順）
        lam: 正則化係数 λ > 0

    Returns:
        KernelRidgeModel: 双対係数と中心化に必要な統計量
    """
    if lam <= 0:
        raise ConfigError("lambda", f"λ は正である必要があります: {lam}")
    k = gram.values
    classes, y = _targets(labels)
    if k.shape[0] != y.shape[0]:
        raise DimensionMismatchError(k.shape[0], y.shape[0])
    col_means = k.mean(axis=0)
    grand = float(k.mean())
    kc = k - col_means[np.newaxis, :] - col_means[:, np.newaxis] + grand
    kc = (kc + kc.T) / 2.0
    y_mean = y.mean(axis=0)
    alpha = _solve_spd(kc + lam * np.eye(k.shape[0]), y - y_mean)
    _logger.info("カーネルリッジ回帰を学習しました: N=%d, C=%d, λ=%g", k.shape[0], classes.size, lam)
    return KernelRidgeModel(
        dual_coef=alpha,
        lam=lam,
        classes=classes,
        train_ids=gram.item_ids,
        column_means=col_means,
        grand_mean=grand,
        target_means=y_mean,
    )


def kridge_scores(model: KernelRidgeModel, cross: CrossGram) -> np.ndarray:
    """クラスごとのスコア (R, C) を返す。"""
    if tuple(cross.col_ids) != tuple(model.train_ids):
        raise FingerprintMismatchError(
            _ids_fingerprint(model.train_ids), _ids_fingerprint(cross.col_ids)
        )
    kx = cross.values
    kc = kx - kx.mean(axis=1, keepdims=True) - model.column_means[np.newaxis, :] + model.grand_mean
    return kc @ model.dual_coef + model.target_means


def kridge_predict(model: KernelRidgeModel, cross: CrossGram) -> np.ndarray:
    """評価項目×学習項目の内積行列からラベルを予測する。

    Raises:
        FingerprintMismatchError: 列が学習項目と同じ順序で並んでいない場合
    """
    return model.classes[np.argmax(kridge_scores(model, cross), axis=1)]
