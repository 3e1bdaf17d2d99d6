"""Seeded random streams keyed by integer coordinates.

A stream depends only on the root seed and its key, so replications can run in
any order (or on any worker) and still reproduce the same numbers.
"""
import numpy as np

# fixed stream families
XI_STREAM = 1
MIXTURE_STREAM = 2
CWALD_STREAM = 3
OPTIMIZER_STREAM = 4
SIMULATION_STREAM = 5


def stream(seed, *key):
    """Independent generator for ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
