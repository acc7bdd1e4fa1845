"""評価指標"""
from typing import Sequence

import numpy as np


def accuracy(pred: Sequence[int], truth: Sequence[int]) -> float:
    """正解率（1 − 正規化ハミング距離）。

    Raises:
        ValueError: 長さが異なる、または空の場合
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"予測と正解の長さが一致しません: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("予測が空です")
    return float(np.mean(pred == truth))
