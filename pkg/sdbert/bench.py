"""
Forward-time scaling of full versus sparse attention.

Only the attention sublayer is timed: random Q, K, V of shape
[heads, n, d_model / heads] go through `attend_dense` with the full mask and
through `attend_sparse` with a fixed global/window/random pattern. A warm-up
call per mode and length is excluded. The slope of log(time) against log(n),
fitted by least squares, estimates the exponent of each mode's cost.
"""

import logging
import time
from typing import Callable, List, Sequence

import numpy as np

from .attention import attend_dense, attend_sparse, build_mask, full_mask
from .errors import ConfigError
from .state import BenchResult, SparsityConfig
from .tensor import Tensor

logger = logging.getLogger(__name__)

BENCH_SPARSITY = SparsityConfig(g=2, w=8, r=4, seed=0)


def fit_slope(lengths: Sequence[int], seconds: Sequence[float]) -> float:
    """Least-squares slope of log(seconds) against log(lengths)."""
    slope, _ = np.polyfit(np.log(np.asarray(lengths, dtype=np.float64)), np.log(np.asarray(seconds)), 1)
    return float(slope)


def _mean_seconds(call: Callable[[], object], repetitions: int) -> float:
    call()  # warm-up
    total = 0.0
    for _ in range(repetitions):
        started = time.perf_counter()
        call()
        total += time.perf_counter() - started
    return total / repetitions


def run_bench(lengths: Sequence[int], d_model: int = 64, heads: int = 4, repetitions: int = 5,
              sparsity: SparsityConfig = BENCH_SPARSITY, seed: int = 0) -> BenchResult:
    lengths = [int(n) for n in lengths]
    if len(lengths) < 2 or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError("bench needs at least two strictly increasing lengths")
    if repetitions < 3:
        raise ConfigError(f"bench needs at least 3 repetitions, got {repetitions}")
    if heads < 1 or d_model % heads:
        raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
    if lengths[0] < sparsity.g:
        raise ConfigError(f"smallest length {lengths[0]} is below g={sparsity.g}")

    rng = np.random.default_rng(seed)
    full_seconds: List[float] = []
    sparse_seconds: List[float] = []
    for n in lengths:
        q, k, v = (Tensor(rng.standard_normal((heads, n, d_model // heads))) for _ in range(3))
        dense_mask = full_mask(n)
        sparse_mask = build_mask(sparsity, n)
        sparse_mask.plan  # built once, outside the timed region
        full_seconds.append(_mean_seconds(lambda: attend_dense(q, k, v, dense_mask), repetitions))
        sparse_seconds.append(_mean_seconds(lambda: attend_sparse(q, k, v, sparse_mask), repetitions))
        logger.info("n=%d full=%.5fs sparse=%.5fs", n, full_seconds[-1], sparse_seconds[-1])

    return BenchResult(
        lengths=lengths,
        repetitions=repetitions,
        d_model=d_model,
        heads=heads,
        sparsity=sparsity,
        full_seconds=full_seconds,
        sparse_seconds=sparse_seconds,
        full_slope=fit_slope(lengths, full_seconds),
        sparse_slope=fit_slope(lengths, sparse_seconds),
    )
