"""Seeded random streams.

Every consumer (weight init, prior noise, target draws, time draws, timing
runs) gets its own named substream derived from a single root seed, so
adding a new consumer never shifts the numbers seen by another one.

The bit generator is Philox-4x64-10 (a counter-based generator with published
round constants); normals are produced from its uniforms with Box-Muller.
"""

from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "philox4x64-10/box-muller"


def _substream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class SeededRng:
    """A named, reproducible random stream.

    ``SeededRng(42, "prior")`` always yields the same sequence; streams with
    different names are statistically independent.
    """

    def __init__(self, seed: int, substream: str = "root"):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.substream = substream
        seq = np.random.SeedSequence(self.seed, spawn_key=(_substream_key(substream),))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, name: str) -> "SeededRng":
        return SeededRng(self.seed, f"{self.substream}/{name}")

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, size) -> np.ndarray:
        """Standard normal draws via the Box-Muller transform."""
        size = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(size, dtype=np.int64))
        pairs = (count + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:count].reshape(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=size)

    def categorical(self, probs, size: int) -> np.ndarray:
        cdf = np.cumsum(np.asarray(probs, dtype=float))
        cdf /= cdf[-1]
        u = self._gen.random(size)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
