"""Seeded random streams.

Every sampler takes ``rng`` as a ``numpy.random.Generator``, an integer seed,
or ``None`` (fresh entropy). Independent streams for parallel work are derived
from a base seed and a stream index through ``numpy.random.SeedSequence``.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(rng=None):
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    seed = int(rng)
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.default_rng(seed & SEED_MASK)


def stream(seed, index):
    """Generator for sub-stream ``index`` of base ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & SEED_MASK, int(index)]))


def streams(seed, count):
    children = np.random.SeedSequence(int(seed) & SEED_MASK).spawn(count)
    return [np.random.default_rng(c) for c in children]
