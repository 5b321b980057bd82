"""Seed derivation.

Every random stream in the package comes from numpy's PCG64 generator seeded
through a ``SeedSequence`` built from an integer root seed plus integer keys.
The same (root, keys) tuple gives the same stream on every platform.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SEED = 123


def derive_seed(seed: int, *keys: int) -> int:
    """Return a 63-bit integer seed derived from ``seed`` and ``keys``."""
    state = np.random.SeedSequence([int(seed), *(int(k) for k in keys)]).generate_state(
        1, dtype=np.uint64
    )
    return int(state[0] >> np.uint64(1))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *(int(k) for k in keys)])))
