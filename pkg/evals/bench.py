"""符号化時間の計測

明示的な符号化方式は集合一つあたり、kVLAD は集合ペア一つの内積評価あたりの
壁時計時間を計測する。計測中は BLAS などのスレッド数を 1 に固定する。
合否の閾値は持たない（ハードウェア依存のため）。
"""
import logging
import time
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, Field
from threadpoolctl import threadpool_limits

_logger = logging.getLogger(__name__)


class BenchRow(BaseModel):
    """計測結果一行分"""
    encoder: str
    geometry: str
    unit: str = Field(..., description="per-set または per-pair")
    mean_ms: float
    median_ms: float
    p95_ms: float
    repeats: int
    warmup: int


def time_calls(fn: Callable[[int], object], warmup: int, repeats: int) -> np.ndarray:
    """fn(i) を warmup 回空回ししてから repeats 回計測する。

    Args:
        fn: 計測対象（引数は繰り返し番号）
        warmup: 空回し回数
        repeats: 計測回数

    Returns:
        np.ndarray: 各回の所要時間（ミリ秒）
    """
    for i in range(warmup):
        fn(i)
    elapsed = np.empty(repeats)
    for i in range(repeats):
        start = time.perf_counter()
        fn(i)
        elapsed[i] = (time.perf_counter() - start) * 1000.0
    return elapsed


def bench_encoder(
    encoder: str,
    geometry: str,
    fn: Callable[[int], object],
    per_pair: bool,
    warmup: int,
    repeats: int,
) -> BenchRow:
    """符号化方式一つを単一スレッドで計測して一行にまとめる。"""
    with threadpool_limits(limits=1):
        elapsed = time_calls(fn, warmup, repeats)
    row = BenchRow(
        encoder=encoder,
        geometry=geometry,
        unit="per-pair" if per_pair else "per-set",
        mean_ms=float(np.mean(elapsed)),
        median_ms=float(np.median(elapsed)),
        p95_ms=float(np.percentile(elapsed, 95)),
        repeats=repeats,
        warmup=warmup,
    )
    _logger.info("計測完了: %s (%s) mean=%.3fms median=%.3fms p95=%.3fms",
                 encoder, row.unit, row.mean_ms, row.median_ms, row.p95_ms)
    return row


def cycle(items: Sequence) -> Callable[[int], object]:
    """繰り返し番号から対象を巡回して選ぶ関数を返す。"""
    if not items:
        raise ValueError("計測対象がありません")
    return lambda i: items[i % len(items)]
