"""Deterministic RNG derivation.

Every random draw in the toolkit comes from a generator derived from an
integer key tuple, so results are reproducible and independent of
execution order: the stream for (seed, sample, op) is the same whether
samples are processed sequentially or in parallel.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 63) - 1


def _entropy(keys: tuple[int, ...]) -> list[int]:
    if not keys:
        raise ValueError("at least one key is required")
    return [int(k) & _MASK for k in keys]


def derive_rng(*keys: int) -> np.random.Generator:
    """Generator keyed by the full tuple; distinct tuples give independent streams."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(keys)))


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into a single 63-bit seed."""
    state = np.random.SeedSequence(_entropy(keys)).generate_state(1, np.uint64)
    return int(state[0]) & _MASK
