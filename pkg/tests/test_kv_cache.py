"""KV cache construction, truncation, and comparison semantics."""

import numpy as np
import pytest

from specdec import KVCache, caches_equal


def filled_cache(n_layers=2, n_heads=2, head_dim=4, capacity=64, positions=5, seed=0):
    cache = KVCache(n_layers, n_heads, head_dim, capacity)
    rng = np.random.default_rng(seed)
    for _ in range(positions):
        for layer in range(n_layers):
            cache.store(
                layer,
                rng.standard_normal((n_heads, head_dim)).astype(np.float32),
                rng.standard_normal((n_heads, head_dim)).astype(np.float32),
            )
        cache.advance(1)
    return cache


class TestConstruction:
    def test_empty(self):
        cache = KVCache(2, 2, 4, 64)
        assert cache.cached_len == 0
        assert len(cache) == 0
        assert len(cache.keys) == 2
        assert cache.keys[0].shape == (2, 64, 4)
        assert cache.keys[0].dtype == np.float32

    def test_minimal_shape(self):
        cache = KVCache(1, 1, 1, 1)
        assert cache.cached_len == 0
        assert cache.capacity == 1

    @pytest.mark.parametrize("shape", [(0, 2, 4, 64), (2, 0, 4, 64), (2, 2, 0, 64), (2, 2, 4, 0)])
    def test_invalid_shape(self, shape):
        with pytest.raises(ValueError):
            KVCache(*shape)


class TestTruncate:
    def test_shortens_length(self):
        cache = filled_cache(positions=5)
        cache.truncate(3)
        assert cache.cached_len == 3

    def test_truncate_to_current_is_identity(self):
        cache = filled_cache(positions=4)
        keys_before = [k.copy() for k in cache.keys]
        cache.truncate(4)
        assert cache.cached_len == 4
        for before, after in zip(keys_before, cache.keys):
            assert np.array_equal(before, after)

    def test_retained_prefix_bit_identical(self):
        cache = filled_cache(positions=6)
        snapshot = [k[:, :3, :].copy() for k in cache.keys]
        cache.truncate(3)
        for before, (after, _) in zip(snapshot, map(cache.layer_kv, range(cache.n_layers))):
            assert np.array_equal(before, after)

    def test_beyond_length_rejected(self):
        cache = filled_cache(positions=3)
        with pytest.raises(ValueError):
            cache.truncate(7)

    def test_negative_rejected(self):
        cache = filled_cache(positions=3)
        with pytest.raises(ValueError):
            cache.truncate(-1)

    def test_never_increases(self):
        cache = filled_cache(positions=5)
        cache.truncate(2)
        with pytest.raises(ValueError):
            cache.truncate(3)


class TestCapacity:
    def test_advance_overflow(self):
        cache = KVCache(1, 1, 1, 2)
        cache.advance(2)
        with pytest.raises(ValueError):
            cache.advance(1)

    def test_store_overflow(self):
        cache = KVCache(1, 1, 2, 1)
        cache.store(0, np.zeros((1, 2), np.float32), np.zeros((1, 2), np.float32))
        cache.advance(1)
        with pytest.raises(ValueError):
            cache.store(0, np.zeros((1, 2), np.float32), np.zeros((1, 2), np.float32))

    def test_reappend_after_truncate_reuses_storage(self):
        cache = KVCache(1, 1, 2, 3)
        cache.store(0, np.ones((1, 2), np.float32), np.ones((1, 2), np.float32))
        cache.advance(1)
        cache.truncate(0)
        cache.store(0, 2 * np.ones((1, 2), np.float32), 2 * np.ones((1, 2), np.float32))
        cache.advance(1)
        assert cache.cached_len == 1
        assert np.all(cache.layer_kv(0)[0] == 2)


class TestEquality:
    def test_reflexive_at_zero_tolerance(self):
        cache = filled_cache()
        assert caches_equal(cache, cache, 0.0)

    def test_identical_copies_equal(self):
        a = filled_cache(seed=1)
        b = filled_cache(seed=1)
        assert caches_equal(a, b, 0.0)

    def test_different_lengths_unequal(self):
        a = filled_cache(positions=5)
        b = filled_cache(positions=4)
        assert not caches_equal(a, b, 1e9)

    def test_different_layout_unequal(self):
        a = KVCache(1, 2, 4, 8)
        b = KVCache(2, 2, 4, 8)
        assert not caches_equal(a, b, 0.0)

    def test_capacity_ignored(self):
        a = filled_cache(capacity=16, positions=3, seed=2)
        b = filled_cache(capacity=64, positions=3, seed=2)
        assert caches_equal(a, b, 0.0)

    def test_tolerance_boundary(self):
        a = filled_cache(seed=3)
        b = filled_cache(seed=3)
        b.keys[0][0, 0, 0] += np.float32(1e-4)
        assert not caches_equal(a, b, 1e-5)
        assert caches_equal(a, b, 1e-3)

    def test_dead_positions_ignored(self):
        a = filled_cache(positions=5, seed=4)
        b = filled_cache(positions=5, seed=4)
        a.truncate(2)
        b.truncate(2)
        b.keys[0][:, 3, :] = 99.0
        assert caches_equal(a, b, 0.0)
