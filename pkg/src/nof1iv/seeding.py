"""Deterministic derivation of random streams from a root seed.

Every stream is keyed by ``(root_seed, *keys)`` through numpy's
``SeedSequence`` spawn keys, so the numbers a replicate sees depend only on
its identity and never on which worker ran it or in what order.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def seed_sequence(root: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root) & MASK64, spawn_key=tuple(int(k) for k in keys))


def stream(root: int, *keys: int) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(root, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root, *keys)))


def derive_seed(root: int, *keys: int) -> int:
    """Return a 64-bit integer seed for ``(root, *keys)``."""
    lo, hi = seed_sequence(root, *keys).generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)
