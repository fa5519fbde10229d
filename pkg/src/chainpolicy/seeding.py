"""Deterministic RNG streams.

Every source of randomness in the package draws from a named stream so that
runs are reproducible bit-for-bit from integer seeds alone.  String tags are
folded through crc32 (never Python's randomized ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(*keys: int | str) -> np.random.Generator:
    """Return a Generator keyed by a mixed sequence of ints and string tags."""
    words = []
    for k in keys:
        if isinstance(k, str):
            words.append(zlib.crc32(k.encode("utf-8")))
        else:
            words.append(int(k) & 0xFFFFFFFF)
            words.append((int(k) >> 32) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


def fold(*keys: int | str) -> int:
    """Fold keys into a single 63-bit integer seed."""
    h = 0x811C9DC5
    for k in keys:
        part = zlib.crc32(str(k).encode("utf-8"))
        h = ((h ^ part) * 0x01000193) & 0x7FFFFFFFFFFFFFFF
    return h
