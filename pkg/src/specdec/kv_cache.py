"""Per-layer key/value cache for incremental decoding.

Each layer owns one contiguous key tensor and one value tensor of shape
(n_heads, capacity, head_dim) in float32; only the first `cached_len`
positions are live. Truncation is logical (the length shrinks, storage
stays), so the accept/reject cycle never reallocates.
"""

from __future__ import annotations

import numpy as np


class KVCache:
    """Cached attention keys/values for one model and one generation session."""

    def __init__(self, n_layers: int, n_heads: int, head_dim: int, capacity: int):
        if min(n_layers, n_heads, head_dim, capacity) < 1:
            raise ValueError(
                "invalid cache shape: layers, heads, head_dim and capacity "
                f"must all be >= 1, got ({n_layers}, {n_heads}, {head_dim}, {capacity})"
            )
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.capacity = capacity
        self.cached_len = 0
        self.keys = [
            np.zeros((n_heads, capacity, head_dim), dtype=np.float32)
            for _ in range(n_layers)
        ]
        self.values = [
            np.zeros((n_heads, capacity, head_dim), dtype=np.float32)
            for _ in range(n_layers)
        ]

    def __len__(self) -> int:
        return self.cached_len

    def store(self, layer: int, k: np.ndarray, v: np.ndarray) -> None:
        """Write key/value rows (n_heads, head_dim) at the next free position.

        The position becomes live only once advance() is called, after all
        layers for that token have been written.
        """
        pos = self.cached_len
        if pos >= self.capacity:
            raise ValueError(f"cache capacity {self.capacity} exceeded")
        self.keys[layer][:, pos, :] = k
        self.values[layer][:, pos, :] = v

    def advance(self, n: int = 1) -> None:
        """Mark n newly written positions as live."""
        if self.cached_len + n > self.capacity:
            raise ValueError(f"cache capacity {self.capacity} exceeded")
        self.cached_len += n

    def truncate(self, new_len: int) -> None:
        """Drop cached positions at and beyond new_len (rollback of rejected tokens)."""
        if new_len > self.cached_len:
            raise ValueError(
                f"cannot truncate cache of length {self.cached_len} to {new_len}"
            )
        if new_len < 0:
            raise ValueError(f"cache length must be nonnegative, got {new_len}")
        self.cached_len = new_len

    def layer_kv(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Views of the live key/value entries for one layer."""
        n = self.cached_len
        return self.keys[layer][:, :n, :], self.values[layer][:, :n, :]


def caches_equal(a: KVCache, b: KVCache, tol: float = 0.0) -> bool:
    """True iff logical shapes and lengths match and live entries agree within tol.

    Only positions [0, cached_len) are compared; capacity is an allocation
    detail and is ignored.
    """
    if (a.n_layers, a.n_heads, a.head_dim) != (b.n_layers, b.n_heads, b.head_dim):
        return False
    if a.cached_len != b.cached_len:
        return False
    n = a.cached_len
    for layer in range(a.n_layers):
        for mine, theirs in ((a.keys, b.keys), (a.values, b.values)):
            diff = np.abs(
                mine[layer][:, :n, :].astype(np.float64)
                - theirs[layer][:, :n, :].astype(np.float64)
            )
            if diff.size and diff.max() > tol:
                return False
    return True
