from __future__ import annotations

import numpy as np


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot/Xavier draw in ``[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]``."""
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def derive_seed(seed: int, *tags) -> int:
    """Deterministic child seed from a parent seed and string/int tags."""
    ss = np.random.SeedSequence([seed, *(_tag_int(t) for t in tags)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _tag_int(tag) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    h = 2166136261
    for b in str(tag).encode("utf-8"):
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h
