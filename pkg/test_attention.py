#!/usr/bin/env python3
"""
Tests for the global / window / random attention pattern and the two attention paths.
"""

import numpy as np
import numpy.testing as npt
import pytest

from sdbert.attention import (
    AttentionMask,
    attend_dense,
    attend_sparse,
    build_mask,
    full_mask,
    mask_stats,
)
from sdbert.errors import ConfigError, DimensionError
from sdbert.state import SparsityConfig
from sdbert.tensor import Tensor, grad_check, mul, reduce_sum, softmax_rows, matmul, scale, transpose

def diagonal(n):
    return AttentionMask(n=n, indptr=np.arange(n + 1, dtype=np.int64), indices=np.arange(n, dtype=np.int64))

def qkv(rng, n, d, lead=()):
    return tuple(Tensor(rng.normal(size=lead + (n, d))) for _ in range(3))

def test_build_mask_diagonal():
    mask = build_mask(SparsityConfig(g=0, w=0, r=0), 4)
    assert mask.rows == [[0], [1], [2], [3]]

def test_build_mask_all_global_is_full():
    for n in (1, 4, 9):
        assert build_mask(SparsityConfig(g=n, w=2, r=3, seed=5), n) == full_mask(n)

def test_build_mask_enumerated_example():
    mask = build_mask(SparsityConfig(g=1, w=1, r=0), 4)
    assert mask.rows == [[0, 1, 2, 3], [0, 1, 2], [0, 1, 2, 3], [0, 2, 3]]
    assert mask.to_text() == "0 1 2 3\n0 1 2\n0 1 2 3\n0 2 3\n"

def test_build_mask_global_exceeds_length():
    with pytest.raises(ConfigError):
        build_mask(SparsityConfig(g=5, w=1, r=0), 4)

def test_full_mask_examples():
    assert full_mask(1).rows == [[0]]
    assert full_mask(3).rows == [[0, 1, 2]] * 3
    assert mask_stats(full_mask(16)) == (256, 16, 1.0)

def test_full_mask_cache_holds_few_lengths():
    full_mask.cache_clear()
    for n in (8, 16, 32, 64, 8):
        full_mask(n).dense()
    assert full_mask.cache_info().currsize <= 2
    assert full_mask(64) is full_mask(64)

def test_mask_stats_examples():
    assert mask_stats(diagonal(16)) == (16, 1, 1 / 16)
    # rows {0,1,2,3}, {0,1,2}, {0,1,2,3}, {0,2,3}
    assert mask_stats(build_mask(SparsityConfig(g=1, w=1, r=0), 4)) == (14, 4, 14 / 16)

def random_configs(count, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(1, 65))
        yield SparsityConfig(
            g=int(rng.integers(0, min(n, 4) + 1)),
            w=int(rng.integers(0, 5)),
            r=int(rng.integers(0, 4)),
            seed=int(rng.integers(0, 2**32)),
        ), n

@pytest.mark.parametrize("config,n", list(random_configs(100)))
def test_mask_properties(config, n):
    mask = build_mask(config, n)
    dense = mask.dense()
    assert mask.row_sizes().min() >= 1
    assert np.all(np.diag(dense))
    assert dense[: config.g].all()
    assert dense[:, : config.g].all()
    for i in range(config.g, n):
        keys = mask.allowed(i)
        assert keys.size <= min(n, config.g + 2 * config.w + 1 + config.r)
        assert np.all(np.diff(keys) > 0)
    assert mask_stats(mask).pairs <= n * (config.g + 2 * config.w + 1 + config.r) + config.g * n

def test_mask_is_deterministic_and_seeded():
    config = SparsityConfig(g=1, w=2, r=3, seed=11)
    build_mask.cache_clear()
    first = build_mask(config, 40).to_text()
    build_mask.cache_clear()
    assert build_mask(config, 40).to_text() == first
    assert build_mask(SparsityConfig(g=1, w=2, r=3, seed=12), 40).to_text() != first

def test_mask_pairs_grow_linearly():
    config = SparsityConfig(g=2, w=8, r=4)
    bound = config.g + 2 * config.w + 1 + config.r + config.g
    for n in (64, 256, 1024, 4096):
        assert mask_stats(build_mask(config, n)).pairs <= bound * n

def test_mask_arrays_are_read_only():
    mask = build_mask(SparsityConfig(g=1, w=1, r=1), 8)
    with pytest.raises(ValueError):
        mask.indices[0] = 3

def test_diagonal_mask_returns_values():
    rng = np.random.default_rng(0)
    q, k, v = qkv(rng, 5, 3)
    npt.assert_array_equal(attend_dense(q, k, v, diagonal(5)).values, v.values)
    npt.assert_allclose(attend_sparse(q, k, v, diagonal(5)).values, v.values, atol=0)

def test_single_position_returns_values():
    rng = np.random.default_rng(1)
    q, k, v = qkv(rng, 1, 4)
    npt.assert_array_equal(attend_dense(q, k, v, full_mask(1)).values, v.values)
    npt.assert_array_equal(attend_sparse(q, k, v, full_mask(1)).values, v.values)

def test_full_mask_matches_unmasked_attention():
    rng = np.random.default_rng(0)
    q, k, v = qkv(rng, 6, 4)
    weights = softmax_rows(scale(matmul(q, transpose(k)), 0.5))
    npt.assert_allclose(attend_dense(q, k, v, full_mask(6)).values, matmul(weights, v).values, atol=1e-12)

def test_sparse_matches_dense_example():
    rng = np.random.default_rng(7)
    q, k, v = qkv(rng, 8, 4)
    mask = build_mask(SparsityConfig(g=1, w=1, r=1, seed=7), 8)
    diff = attend_sparse(q, k, v, mask).values - attend_dense(q, k, v, mask).values
    assert np.max(np.abs(diff)) <= 1e-10

def equivalence_cases():
    rng = np.random.default_rng(2024)
    cases = [(SparsityConfig(g=0, w=0, r=0), 7), (SparsityConfig(g=0, w=3, r=0), 12),
             (SparsityConfig(g=0, w=0, r=3, seed=4), 10), (SparsityConfig(g=9, w=1, r=1), 9),
             (SparsityConfig(g=2, w=1, r=2, seed=3), 1 + 1)]
    while len(cases) < 60:
        n = int(rng.integers(1, 65))
        cases.append((SparsityConfig(g=int(rng.integers(0, min(n, 3) + 1)), w=int(rng.integers(0, 6)),
                                     r=int(rng.integers(0, 5)), seed=int(rng.integers(0, 1000))), n))
    return cases

@pytest.mark.parametrize("case", range(60))
def test_sparse_matches_dense(case):
    config, n = equivalence_cases()[case]
    rng = np.random.default_rng(case)
    q, k, v = qkv(rng, n, 4, lead=(2, 3))
    mask = build_mask(config, n)
    diff = attend_sparse(q, k, v, mask).values - attend_dense(q, k, v, mask).values
    assert np.max(np.abs(diff)) <= 1e-10

@pytest.mark.parametrize("seed", range(5))
def test_sparse_matches_dense_with_key_padding(seed):
    rng = np.random.default_rng(seed)
    n = 16
    q, k, v = qkv(rng, n, 4, lead=(3, 2))
    real = np.zeros((3, 1, n), dtype=bool)
    for b, length in enumerate(rng.integers(1, n + 1, size=3)):
        real[b, 0, :length] = True
    mask = build_mask(SparsityConfig(g=1, w=2, r=2, seed=seed), n)
    dense = attend_dense(q, k, v, mask, key_padding=real).values
    sparse = attend_sparse(q, k, v, mask, key_padding=real).values
    assert np.max(np.abs(sparse - dense)) <= 1e-10

def test_padded_keys_are_invisible_to_real_rows():
    rng = np.random.default_rng(4)
    n = 8
    q, k, v = qkv(rng, n, 4, lead=(1,))
    real = np.array([[True] * 5 + [False] * 3])
    out = attend_sparse(q, k, v, full_mask(n), key_padding=real).values
    altered = v.values.copy()
    altered[:, 5:] = rng.normal(size=(1, 3, 4))
    changed = attend_sparse(q, k, Tensor(altered), full_mask(n), key_padding=real).values
    npt.assert_array_equal(out[:, :5], changed[:, :5])

def test_shape_mismatch():
    rng = np.random.default_rng(0)
    q, k, _ = qkv(rng, 4, 3)
    with pytest.raises(DimensionError):
        attend_dense(q, k, Tensor(np.ones((4, 2))), full_mask(4))
    with pytest.raises(DimensionError):
        attend_sparse(q, k, k, full_mask(5))

@pytest.mark.parametrize("attend", [attend_dense, attend_sparse])
@pytest.mark.parametrize("seed", range(20))
def test_attention_gradients(attend, seed):
    rng = np.random.default_rng(seed)
    q, k, v = qkv(rng, 6, 3)
    weights = Tensor(rng.uniform(-1, 1, size=(6, 3)))
    mask = build_mask(SparsityConfig(g=1, w=1, r=1, seed=seed), 6)
    assert grad_check(lambda x: reduce_sum(attend(x, k, v, mask)), q) <= 1e-4
    assert grad_check(lambda x: reduce_sum(mul(attend(q, x, v, mask), weights)), k) <= 1e-4
    assert grad_check(lambda x: reduce_sum(mul(attend(q, k, x, mask), weights)), v) <= 1e-4
