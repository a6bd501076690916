"""Scheduler-independent seeding: every random stream is keyed by (base seed, index, purpose)."""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_seed", "generator"]

_MASK64 = (1 << 64) - 1


def derive_seed(base_seed: int, index: int, tag: str) -> int:
    """64-bit seed for stream ``index`` of purpose ``tag`` under ``base_seed``."""
    ss = np.random.SeedSequence([int(base_seed) & _MASK64, int(index), zlib.crc32(tag.encode())])
    lo, hi = ss.generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)


def generator(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & _MASK64))
