"""Seeded, splittable random streams."""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


class Rng:
    """PCG64 stream addressed by ``(seed, *path)``.

    ``spawn`` derives an independent child stream from a string or integer
    key, so call order elsewhere never perturbs a given consumer.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *keys) -> Rng:
        return Rng(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def bernoulli(self, p: float, size) -> np.ndarray:
        return self.gen.random(size) < p

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"
