"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, labels...)`` and whose counter's high word is the stream
index. Replicate ``r`` therefore always sees the same numbers no matter which
worker runs it or in what order.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_int(label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    if isinstance(label, (float, np.floating)):
        # prevalences etc. are used as labels; key them on a fixed decimal form
        return zlib.crc32(repr(round(float(label), 12)).encode("utf-8"))
    value = int(label)
    if value < 0:
        raise ValueError("integer stream labels must be non-negative")
    return value


def _entropy(seed, labels):
    return [int(seed) & _MASK64, *(_label_int(lab) for lab in labels)]


def derive_seed(seed: int, *labels) -> int:
    """Deterministic 64-bit child seed for a labelled sub-task."""
    return int(np.random.SeedSequence(_entropy(seed, labels)).generate_state(1, np.uint64)[0])


class Streams:
    """Family of independent generators sharing one Philox key."""

    def __init__(self, seed: int, *labels):
        self.key = np.random.SeedSequence(_entropy(seed, labels)).generate_state(2, np.uint64)

    def __call__(self, index: int) -> np.random.Generator:
        # streams occupy disjoint 2**192-long counter blocks
        counter = np.array([0, 0, 0, int(index)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))


def stream(seed: int, index: int = 0, *labels) -> np.random.Generator:
    """Generator for stream ``index`` under key ``(seed, labels)``."""
    return Streams(seed, *labels)(index)
