"""Named random streams derived from a single master seed.

Every stream is a Philox (counter-based, 64-bit) generator keyed by the
master seed plus a stable hash of the stream name and optional integer
keys. Draws from one stream never shift another stream, so adding a new
consumer does not perturb existing results.
"""

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class Streams:
    """Factory of independent generators addressed by name."""

    def __init__(self, seed: int):
        if seed is None:
            raise ValueError("a master seed is required")
        self.seed = int(seed)

    def get(self, name: str, *keys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(_name_key(name), *map(int, keys)))
        return np.random.Generator(np.random.Philox(ss))

    def child_seed(self, name: str, *keys: int) -> int:
        """A 63-bit integer seed for handing to another component."""
        return int(self.get(name, *keys).integers(0, 2**63 - 1))

    def __repr__(self):
        return f"Streams(seed={self.seed})"
