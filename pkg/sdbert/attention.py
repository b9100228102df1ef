"""
Sparse attention patterns and the two ways of evaluating attention under them.

A mask is built from three token classes: the first `g` positions are global
(they see every key and every row sees them), each row sees a window of `w`
neighbours on both sides, and `r` further keys are drawn at random per row.

`attend_dense` scores every (query, key) pair and blocks the disallowed ones;
it is the reference. `attend_sparse` gathers only the permitted keys for each
row, so its work grows with the pattern size instead of with n.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .state import SparsityConfig
from .tensor import (
    NEG_SENTINEL,
    Tensor,
    concat,
    index_select,
    matmul,
    reshape,
    scale,
    softmax_rows,
    transpose,
)

logger = logging.getLogger(__name__)


class MaskStats(NamedTuple):
    pairs: int
    max_row: int
    density: float


class _GatherPlan(NamedTuple):
    wide_rows: np.ndarray      # rows that permit every key
    narrow_rows: np.ndarray    # the rest
    index: np.ndarray          # [len(narrow_rows), width] key ids, padded with the row's own id
    valid: np.ndarray          # [len(narrow_rows), width] False on padding slots
    restore: Optional[np.ndarray]  # permutation back to natural row order, None if already natural


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """
    Per-query sets of permitted keys, stored compressed by row.

    Row i's permitted keys are `indices[indptr[i]:indptr[i + 1]]`, sorted ascending.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    def allowed(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def rows(self) -> list:
        return [self.allowed(i).tolist() for i in range(self.n)]

    def row_sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttentionMask):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self) -> int:
        return hash((self.n, self.indptr.tobytes(), self.indices.tobytes()))

    def dense(self) -> np.ndarray:
        """Boolean [n, n] matrix of permitted pairs (read-only, built once)."""
        return self._dense

    @cached_property
    def _dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=bool)
        out[np.repeat(np.arange(self.n), self.row_sizes()), self.indices] = True
        out.setflags(write=False)
        return out

    def to_text(self) -> str:
        """One line per query row: its permitted keys, space separated."""
        return "".join(" ".join(map(str, row)) + "\n" for row in self.rows)

    @cached_property
    def plan(self) -> _GatherPlan:
        sizes = self.row_sizes()
        wide = np.flatnonzero(sizes == self.n)
        narrow = np.flatnonzero(sizes != self.n)
        width = int(sizes[narrow].max()) if narrow.size else 0
        index = np.repeat(narrow[:, None], width, axis=1)
        valid = np.zeros((narrow.size, width), dtype=bool)
        for slot, i in enumerate(narrow):
            keys = self.allowed(i)
            index[slot, : keys.size] = keys
            valid[slot, : keys.size] = True
        order = np.concatenate([wide, narrow])
        restore = None if np.array_equal(order, np.arange(self.n)) else np.argsort(order)
        return _GatherPlan(wide, narrow, index, valid, restore)


def _from_rows(n: int, rows: list) -> AttentionMask:
    sizes = np.fromiter((row.size for row in rows), dtype=np.int64, count=n)
    indptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    indices = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, dtype=np.int64)
    return AttentionMask(n=n, indptr=indptr, indices=indices)


@lru_cache(maxsize=2)
def full_mask(n: int) -> AttentionMask:
    """Every query may attend to every key."""
    if n < 1:
        raise ConfigError(f"sequence length must be at least 1, got {n}")
    return AttentionMask(
        n=n,
        indptr=np.arange(n + 1, dtype=np.int64) * n,
        indices=np.tile(np.arange(n, dtype=np.int64), n),
    )


def _random_keys(config: SparsityConfig, i: int, n: int, taken: np.ndarray) -> np.ndarray:
    # one generator per (seed, row) keeps rows independent of each other
    rng = np.random.default_rng([config.seed, i])
    candidates = np.setdiff1d(np.arange(n, dtype=np.int64), taken, assume_unique=True)
    count = min(config.r, candidates.size)
    return rng.choice(candidates, size=count, replace=False) if count else candidates[:0]


@lru_cache(maxsize=64)
def build_mask(config: SparsityConfig, n: int) -> AttentionMask:
    """Global, sliding-window and random pattern for a sequence of length n."""
    if n < 1:
        raise ConfigError(f"sequence length must be at least 1, got {n}")
    if config.g > n:
        raise ConfigError(f"global token count g={config.g} exceeds sequence length n={n}")

    everything = np.arange(n, dtype=np.int64)
    global_cols = everything[: config.g]
    rows = []
    for i in range(n):
        if i < config.g:
            rows.append(everything)
            continue
        window = everything[max(0, i - config.w): min(n, i + config.w + 1)]
        keys = np.union1d(window, global_cols)
        if config.r:
            keys = np.union1d(keys, _random_keys(config, i, n, keys))
        rows.append(keys)
    mask = _from_rows(n, rows)
    logger.debug("built mask n=%d g=%d w=%d r=%d pairs=%d", n, config.g, config.w, config.r, mask.indices.size)
    return mask


def mask_stats(mask: AttentionMask) -> MaskStats:
    """Permitted pair count, largest row, and pairs / n²."""
    pairs = int(mask.indices.size)
    return MaskStats(pairs=pairs, max_row=int(mask.row_sizes().max()), density=pairs / mask.n**2)


def _check_shapes(q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask) -> None:
    if q.ndim < 2 or q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"Q, K, V must share one shape, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-2] != mask.n:
        raise DimensionError(f"mask covers {mask.n} positions but inputs have {q.shape[-2]}")


def _additive(allowed: np.ndarray) -> np.ndarray:
    return np.where(allowed, 0.0, NEG_SENTINEL)


def _admit_real_keys(allowed: np.ndarray, key_padding: Optional[np.ndarray], keys: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """
    Drop padded keys from `allowed`, except a row's own position.

    `key_padding` is True on real tokens, shaped [..., n] with leading axes
    broadcastable to the inputs'. `keys` holds the key id of each column of
    `allowed` and `rows` the query id of each row.
    """
    if key_padding is None:
        return allowed
    real = np.take(np.asarray(key_padding, dtype=bool), keys, axis=-1)
    if keys.ndim == 1:
        real = real[..., None, :]
    return allowed & (real | (keys == rows[:, None]))


def attend_dense(
    q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask, key_padding: Optional[np.ndarray] = None
) -> Tensor:
    """softmax(QKᵀ/√d with disallowed pairs blocked) · V over the full score matrix."""
    _check_shapes(q, k, v, mask)
    n = mask.n
    positions = np.arange(n)
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    allowed = _admit_real_keys(mask.dense(), key_padding, positions, positions)
    return matmul(softmax_rows(scores, _additive(allowed)), v)


def attend_sparse(
    q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask, key_padding: Optional[np.ndarray] = None
) -> Tensor:
    """
    Same result as `attend_dense`, computing scores only for permitted pairs.

    Rows that permit every key are evaluated as one dense block; every other
    row gathers its keys and values, padded to the widest such row.
    """
    _check_shapes(q, k, v, mask)
    plan = mask.plan
    lead = q.shape[:-2]
    d = q.shape[-1]
    factor = 1.0 / math.sqrt(d)
    parts = []

    if plan.wide_rows.size:
        q_wide = q if plan.wide_rows.size == mask.n else index_select(q, plan.wide_rows)
        scores = scale(matmul(q_wide, transpose(k)), factor)
        allowed = np.ones((plan.wide_rows.size, mask.n), dtype=bool)
        allowed = _admit_real_keys(allowed, key_padding, np.arange(mask.n), plan.wide_rows)
        parts.append(matmul(softmax_rows(scores, _additive(allowed)), v))

    if plan.narrow_rows.size:
        m, width = plan.index.shape
        q_narrow = q if m == mask.n else index_select(q, plan.narrow_rows)
        k_rows = index_select(k, plan.index)           # [..., m, width, d]
        v_rows = index_select(v, plan.index)
        scores = matmul(reshape(q_narrow, lead + (m, 1, d)), transpose(k_rows))
        scores = scale(reshape(scores, lead + (m, width)), factor)
        allowed = _admit_real_keys(plan.valid, key_padding, plan.index, plan.narrow_rows)
        weights = softmax_rows(scores, _additive(allowed))
        out = matmul(reshape(weights, lead + (m, 1, width)), v_rows)
        parts.append(reshape(out, lead + (m, d)))

    out = parts[0] if len(parts) == 1 else concat(parts, axis=-2)
    if plan.restore is not None:
        out = index_select(out, plan.restore)
    return out
