"""Deterministic pseudo-random numbers for every randomized step in the pipeline.

All constants are spelled out so that splits, augmentation draws, synthetic
data, and weight initialization can be reproduced bit-for-bit outside this
package:

* generator: xorshift64* (shift triple 12/25/27, multiplier 0x2545F4914F6CDD1D)
* seeding and stream derivation: splitmix64 (increment 0x9E3779B97F4A7C15)
* stage names fold into seeds via FNV-1a 64
  (offset 0xCBF29CE484222325, prime 0x100000001B3)

Floats in [0, 1) take the top 53 bits of one 64-bit output.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1

_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_SPLITMIX_INC = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    """One splitmix64 step; maps any 64-bit value to a well-mixed 64-bit value."""
    z = (x + _SPLITMIX_INC) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def stage_seed(global_seed: int, stage: str) -> int:
    """Fan one global seed out to an independent, reproducible per-stage seed."""
    return splitmix64((global_seed & MASK64) ^ fnv1a64(stage))


def derive_seed(seed: int, *values: int) -> int:
    """Mix integers (epoch, sample index, ...) into a seed, order-sensitively."""
    s = seed & MASK64
    for v in values:
        s = splitmix64(s ^ (v & MASK64))
    return s


class Prng:
    """xorshift64* stream seeded through splitmix64.

    The state is never zero: a zero post-mix seed is replaced by the splitmix
    increment constant.
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        state = splitmix64(seed & MASK64)
        self._state = state if state != 0 else _SPLITMIX_INC

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * _XORSHIFT_MULT) & MASK64

    def uniform(self) -> float:
        """Float in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def coin(self) -> bool:
        return self.uniform() < 0.5

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n), by rejection sampling."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        span = 1 << 64
        threshold = span - span % n
        while True:
            u = self.next_u64()
            if u < threshold:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), in draw order (partial Fisher-Yates)."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """One Gaussian draw via Box-Muller; consumes two uniforms, no caching."""
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log() finite
        u2 = self.uniform()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, shape, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        size = int(np.prod(shape))
        out = np.empty(size)
        for i in range(size):
            out[i] = self.normal(mu, sigma)
        return out.reshape(shape)

    def uniforms(self, shape) -> np.ndarray:
        size = int(np.prod(shape))
        out = np.empty(size)
        for i in range(size):
            out[i] = self.uniform()
        return out.reshape(shape)
