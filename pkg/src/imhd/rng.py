"""Splittable deterministic randomness on top of numpy's Philox counter stream.

Every consumer derives its own named child stream, so adding or reordering
one initializer never shifts the draws seen by another. The root seed is
what gets recorded in checkpoints.
"""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    def __init__(self, seed: int, _path: str = ""):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._path = _path
        key = hashlib.blake2b(f"{self.seed}:{_path}".encode(), digest_size=8).digest()
        self.gen = np.random.Generator(np.random.Philox(key=int.from_bytes(key, "little")))

    def split(self, label: str) -> "Rng":
        """Independent child stream; same (seed, path) always gives same draws."""
        return Rng(self.seed, f"{self._path}/{label}")

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self.gen.standard_normal(shape) * std

    def trunc_normal(self, shape, std: float = 0.02, clip: float = 2.0) -> np.ndarray:
        """Normal draws with |x| > clip resampled, then scaled by std."""
        out = self.gen.standard_normal(shape)
        bad = np.abs(out) > clip
        while bad.any():
            out[bad] = self.gen.standard_normal(int(bad.sum()))
            bad = np.abs(out) > clip
        return out * std

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, seq):
        return seq[int(self.gen.integers(0, len(seq)))]
