"""Deterministic random streams.

All randomness in the package flows through Philox counter-based generators
keyed by (seed, purpose-tag). Philox is portable and counter-based, so every
stream is independent of the order in which other streams are consumed —
samples can be generated in parallel without changing any bytes.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def tag64(text: str) -> int:
    """FNV-1a hash of a purpose string, used as the second Philox key word."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def stream(seed: int, *parts) -> np.random.Generator:
    """A fresh generator for one purpose, e.g. stream(seed, "gen", "source", 7).

    Identical (seed, parts) always yield an identical stream; distinct parts
    yield independent streams.
    """
    label = "/".join(str(p) for p in parts)
    key = np.array([seed & _MASK64, tag64(label)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
