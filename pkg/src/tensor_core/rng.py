import zlib
from typing import Sequence

import numpy as np

from src.tensor_core.errors import ArgumentError

# Named substreams used across the engine
INIT = "init"
DROPOUT = "dropout"
NOISE = "noise"
SHUFFLE = "shuffle"


class Rng:
    """Seeded random source.

    One master seed fans out into independent named substreams, so changing how
    much randomness one part of training consumes never shifts another part.
    A single Rng is owned by one consumer at a time.
    """

    def __init__(self, seed: int, _spawn_key: Sequence[int] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        self._sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self._spawn_key)
        self._generator = np.random.Generator(np.random.PCG64(self._sequence))

    def substream(self, name: str) -> "Rng":
        """Deterministic child stream; the same name always gives the same draws"""
        key = zlib.crc32(name.encode("utf-8"))
        return Rng(self.seed, self._spawn_key + (key,))

    def child(self, index: int) -> "Rng":
        """Indexed child stream, e.g. one per sample"""
        return Rng(self.seed, self._spawn_key + (0x5EED, int(index)))

    def normal(self, mean: float, stddev: float, shape) -> np.ndarray:
        return self._generator.normal(mean, stddev, size=shape)

    def uniform(self, low: float, high: float, shape=None):
        return self._generator.uniform(low, high, size=shape)

    def random(self, shape=None):
        return self._generator.random(size=shape)

    def integers(self, low: int, high: int, shape=None):
        """Integers in the closed range [low, high]"""
        return self._generator.integers(low, high, size=shape, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)
