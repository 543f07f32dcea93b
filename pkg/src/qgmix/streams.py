"""Deterministic random streams keyed by integer paths.

A stream is a function of ``(seed, *key)`` only, so work items can run in any
order (or in parallel) and still draw identical numbers.
"""

from __future__ import annotations

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, None]


def seed_sequence(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    if seed is None:
        seed = 0
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def stream(seed: SeedLike, *key: int) -> np.random.Generator:
    """Generator for the child stream at ``key`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


def mix_seed(base_seed: int, *key: int) -> int:
    """Collapse ``(base_seed, *key)`` into one 64-bit integer seed."""
    return int(seed_sequence(base_seed, *key).generate_state(1, dtype=np.uint64)[0])


def resample_counts(rng: np.random.Generator, n: int) -> np.ndarray:
    """Multiplicities of a size-n resample of rows with replacement."""
    return np.bincount(rng.integers(0, n, n), minlength=n)
