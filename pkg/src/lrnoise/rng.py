"""Seeded counter-based random streams.

Every stochastic op takes an :class:`RngStream`. Streams are Philox
generators keyed by ``(seed, path)``; :meth:`RngStream.spawn` derives a
child stream whose key extends the path, so parallel units never share
state and results do not depend on evaluation order.
"""
from __future__ import annotations

import numpy as np


class RngStream:
    __slots__ = ("seed", "path", "_gen")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.path + keys)

    def split(self, n: int) -> list["RngStream"]:
        return [self.spawn(i) for i in range(n)]

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"
