"""Seed derivation.

Every random stream is a ``numpy.random.Generator`` backed by PCG64 and keyed
through ``numpy.random.SeedSequence``. Keys are tuples of non-negative ints and
strings; strings are mapped to ints with CRC-32 so the mapping is stable across
interpreter runs (unlike ``hash``).
"""
from __future__ import annotations

import zlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator, None]


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("boolean seed keys are ambiguous")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported seed key type: {type(key).__name__}")


def make_rng(*keys: int | str) -> np.random.Generator:
    """Return a PCG64 generator deterministically derived from ``keys``."""
    entropy = [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    return make_rng(seed)


def derive_seed(*keys: int | str) -> int:
    """Collapse ``keys`` into a single 63-bit integer seed."""
    return int(make_rng(*keys).integers(0, 2**63 - 1))
