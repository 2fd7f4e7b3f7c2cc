"""Deterministic random-number streams.

All randomness in the package flows through Philox (counter-based) generators
derived from a root seed plus a named path, e.g. ``stream(seed, "train", loop)``.
Distinct paths give statistically independent streams, so batch work can be
fanned out without changing results.
"""

from __future__ import annotations

import zlib

import numpy as np


def _path_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    """Philox generator for (seed, path); path parts are ints or names."""
    key = tuple(_path_part(p) for p in path)
    seq = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))
