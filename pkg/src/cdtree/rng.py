"""Seed derivation.

Every random stream is keyed by ``(base seed, *labels)`` through numpy's
``SeedSequence`` spawn keys, so a replicate, bootstrap or tree gets the same
stream no matter which worker runs it or in what order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def derive_seed_sequence(seed: int, *labels) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in labels))


def derive_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(seed, *labels))


def derive_int(seed: int, *labels) -> int:
    """A 31-bit integer seed for code that takes plain integers."""
    return int(derive_seed_sequence(seed, *labels).generate_state(1)[0] & 0x7FFFFFFF)
