"""Counter-based splittable random streams.

A stream is identified by (master_seed, path), where path is a tuple of
split indices.  Streams with distinct paths are statistically independent,
and the same (seed, path) reproduces the identical sample sequence no matter
how replicas are scheduled across workers.  Built on numpy's Philox
counter-based generator keyed by SeedSequence(master_seed, spawn_key=path).
"""

from __future__ import annotations

import numpy as np

__all__ = ["RandomStream"]


class RandomStream:
    """Hierarchically splittable source of randomness.

    ``child(i, j, ...)`` derives the stream at ``path + (i, j, ...)``.
    ``generator`` lazily instantiates the numpy Generator; a stream object
    is cheap to create and can be shipped to workers by value.
    """

    __slots__ = ("master_seed", "path", "_gen")

    def __init__(self, master_seed, path=()):
        seed = int(master_seed)
        if not 0 <= seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        self.master_seed = seed
        self.path = tuple(int(p) for p in path)
        if any(p < 0 or p >= 2**64 for p in self.path):
            raise ValueError("path entries must fit in 64 bits")
        self._gen = None

    def child(self, *indices):
        return RandomStream(self.master_seed, self.path + tuple(indices))

    # spec name for a single split
    def split(self, index):
        return self.child(index)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    @property
    def key(self) -> str:
        """Stable identifier recorded in sampled objects (seed_record)."""
        if not self.path:
            return str(self.master_seed)
        return "%d:%s" % (self.master_seed, "/".join(str(p) for p in self.path))

    def __repr__(self):
        return "RandomStream(%s)" % self.key

    def __eq__(self, other):
        return (
            isinstance(other, RandomStream)
            and self.master_seed == other.master_seed
            and self.path == other.path
        )

    def __hash__(self):
        return hash((self.master_seed, self.path))
