"""
Seeding
=======

Every random task draws from a generator derived from the master seed and
a stable task key, so results never depend on scheduling or worker count.
"""

import zlib

import numpy as np


def task_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_seed(seed: int, name: str, *indices: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), task_key(name), *[int(i) for i in indices]])


def derive_rng(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for task `name` (e.g. a learner or ensemble) at fold `indices`."""
    return np.random.default_rng(derive_seed(seed, name, *indices))


def derive_int(seed: int, name: str, *indices: int) -> int:
    """A 32-bit integer seed for estimators that take `random_state`."""
    return int(derive_seed(seed, name, *indices).generate_state(1)[0])
