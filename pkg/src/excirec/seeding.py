"""Seed derivation for reproducible ensembles.

Each realization gets its own generator derived from ``(master_seed, index)``
so results do not depend on execution order.
"""
import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *keys: int) -> int:
    """Hash ``master_seed`` and integer keys into a 64-bit seed."""
    ss = np.random.SeedSequence([int(master_seed) & MASK64, *[int(k) & MASK64 for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))
