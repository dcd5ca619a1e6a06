"""Counter-based random number generation.

Each draw opens a fresh Philox stream keyed by (seed, counter) and bumps the
counter, so a fixed seed plus an identical call sequence reproduces the same
values regardless of how intermediate arrays were computed.
"""
from __future__ import annotations

import numpy as np


class RngState:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0

    def _generator(self) -> np.random.Generator:
        g = np.random.Generator(np.random.Philox(key=self.seed, counter=self.counter))
        self.counter += 1
        return g

    def uniform(self, shape) -> np.ndarray:
        return self._generator().random(shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._generator().normal(0.0, scale, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator().permutation(n)

    def fork(self, offset: int) -> "RngState":
        """Independent stream for a sub-task (e.g. one seed of a sweep)."""
        return RngState(self.seed * 1_000_003 + offset)
