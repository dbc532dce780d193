"""Deterministic, labeled random streams.

One root seed drives every random decision in a run.  Streams are split by
hashing (seed, label), so adding a consumer never perturbs the draws of an
existing one.  The bit generator is PCG64 (a documented 64-bit
permuted-congruential generator); normal variates come from Box-Muller over
the uniform stream rather than the library's ziggurat, keeping the sampling
algorithm pinned in this codebase.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .engine import Tensor

ALGORITHM = "pcg64/box-muller"


def _stream_state(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}\x1f{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


class Rng:
    """One labeled stream of a root seed."""

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        self._gen = np.random.Generator(np.random.PCG64(_stream_state(self.seed, label)))

    def split(self, label: str) -> "Rng":
        """Independent child stream; deterministic in (seed, full label path)."""
        return Rng(self.seed, f"{self.label}/{label}")

    def uniform(self, shape=()) -> np.ndarray:
        """U[0, 1) as float64."""
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal float32 via Box-Muller on the uniform stream."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]: keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = z[:n].astype(np.float32)
        return out.reshape(shape) if shape else out[0]


def gaussian(rng: Rng, shape) -> Tensor:
    """i.i.d. standard normal tensor drawn from `rng`."""
    return Tensor(rng.normal(tuple(shape)))
