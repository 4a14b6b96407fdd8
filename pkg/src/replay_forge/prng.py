"""SplitMix64, the single PRNG behind every seeded decision in the package.

The stream is fully specified by its constants, so identical seeds give
identical draws on every platform. Output ``i`` (0-based) of a stream seeded
with ``s`` is ``mix(s + (i + 1) * GOLDEN)``, which lets :meth:`SplitMix64.fill`
produce long blocks with vectorised numpy arithmetic.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance one step. Returns ``(value, new_state)``."""
    state = (state + GOLDEN) & MASK64
    return mix64(state), state


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, *parts: int | str) -> int:
    """Stable 64-bit seed for a named sub-stream (e.g. seed, sample_id, epoch)."""
    h = mix64((seed & MASK64) ^ GOLDEN)
    for part in parts:
        if isinstance(part, str):
            v = fnv1a64(part.encode("utf-8"))
        else:
            v = part & MASK64
        h = mix64(((h + GOLDEN) & MASK64) ^ v)
    return h


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        value, self.state = splitmix64_next(self.state)
        return value

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection, no modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle_prefix(self, items: list, k: int) -> list:
        """First ``k`` items of a Fisher-Yates shuffle: a uniform k-sample in draw order."""
        pool = list(items)
        n = len(pool)
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def fill(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint64 array; equivalent to ``n`` calls of next_u64."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` floats in [0, 1), matching repeated :meth:`random` calls."""
        return (self.fill(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
