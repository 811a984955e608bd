"""Seedable xoshiro256** generator with splitmix64 seeding.

Pure-integer arithmetic so that every draw is reproducible bit-for-bit in
any language that implements the same two published algorithms.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** 1.0.

    ``Xoshiro256(seed)`` fills the 256-bit state from four splitmix64
    outputs; ``Xoshiro256.from_state`` sets it directly.
    """

    def __init__(self, seed: int = 0):
        sm = SplitMix64(seed)
        self.s = [sm.next() for _ in range(4)]

    @classmethod
    def from_state(cls, state) -> "Xoshiro256":
        obj = cls.__new__(cls)
        obj.s = [int(v) & MASK64 for v in state]
        if not any(obj.s):
            raise ValueError("xoshiro state must not be all zero")
        return obj

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float = 0.0, high: float = 1.0, size: int | None = None):
        if size is None:
            return low + (high - low) * self.random()
        u = np.fromiter((self.random() for _ in range(size)), dtype=np.float64, count=size)
        return low + (high - low) * u

    def integers(self, low: int, high: int) -> int:
        """Integer in [low, high) by rejection-free multiply-shift."""
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        return low + ((self.next_u64() * span) >> 64)


def stream_seed(seed: int, name: str) -> int:
    """Derive the seed of a named sub-stream from a root seed."""
    tag = int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")
    return SplitMix64((seed & MASK64) ^ tag).next()


def substream(seed: int, name: str) -> Xoshiro256:
    return Xoshiro256(stream_seed(seed, name))
