"""Seeded random streams.

Backed by numpy's Philox4x64-10, a counter-based generator: the key comes from
``SeedSequence(seed)`` and every draw advances a 256-bit counter.  Streams are
reproducible for a given seed and call sequence on a given numpy build.
"""
from __future__ import annotations

import numpy as np


class SeededRng:
    def __init__(self, seed, *stream):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence([self.seed, *self.stream])
        self.gen = np.random.Generator(np.random.Philox(seq))

    def derive(self, *stream):
        """Independent child stream, e.g. one per sample id."""
        return SeededRng(self.seed, *self.stream, *stream)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        """Integers in ``[low, high)``."""
        return self.gen.integers(low, high, size)

    def choice(self, n, size=None, replace=True):
        return self.gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"
