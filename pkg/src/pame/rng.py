"""Counter-based random streams derived from a single run seed.

Every consumer asks for a stream by ``(seed, purpose, *indices)``; the tuple is
hashed through :class:`numpy.random.SeedSequence` into a Philox key, so each
(node, iteration, purpose) combination gets an independent, replayable stream
regardless of the order in which streams are requested.
"""

from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    GRAPH = 1
    DATA = 2
    KAPPA = 3
    NEIGHBORS = 4
    COORDINATES = 5
    BATCH = 6
    EPSILON = 7
    MONTE_CARLO = 8
    ORACLE = 9


def stream(seed: int, purpose: Purpose, *indices: int) -> np.random.Generator:
    """Return the generator for ``(seed, purpose, *indices)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (int(purpose), *(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))
