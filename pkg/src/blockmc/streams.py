"""Seeded random streams.

All stochastic code in the package draws from counter-based Philox
generators keyed through ``numpy.random.SeedSequence``, so any (seed, key
path) pair maps to the same stream on every platform and every run.
Independent key paths give statistically independent substreams, which is
what lets chains, blocks, and restarts run in parallel while staying
bit-reproducible.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent Philox generator for (seed, *key)."""
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def derive_seed(seed: int, *key: int) -> int:
    """Derive a child integer seed, for APIs that take seeds rather than rngs."""
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])
