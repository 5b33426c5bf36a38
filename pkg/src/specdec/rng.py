"""Deterministic SplitMix64 random stream shared by sampling and weight init."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0**-53


class Rng:
    """SplitMix64 generator producing uniforms in [0, 1).

    One instance is one generation session's stream. The state advances by
    exactly one step per uniform, so draw order is the reproducibility
    contract across runs.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_uniform(self) -> float:
        """Advance one step and return a uniform in [0, 1) with 53 random bits."""
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        z = z ^ (z >> 31)
        return (z >> 11) * _INV_2_53

    def next_block(self, n: int) -> np.ndarray:
        """Return the next n uniforms as a float64 array.

        Bit-identical to calling next_uniform() n times; vectorized because
        SplitMix64 state i is just seed + i * golden ratio (wrapping).
        """
        if n < 0:
            raise ValueError(f"block size must be nonnegative, got {n}")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53
