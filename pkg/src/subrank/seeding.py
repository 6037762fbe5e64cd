"""Derivation of named sub-seeds from one global seed.

Every source of randomness in a run (split, negative sampling, weight init,
shuffling, ...) draws from its own named stream so nondeterminism can be
isolated to a single stage. Derivation is a stable hash, not Python's
randomized ``hash()``.
"""

import hashlib

import numpy as np


def derive_seed(base_seed: int, name: str) -> int:
    """Return a deterministic 63-bit seed for the stream ``name``."""
    digest = hashlib.blake2b(f"{base_seed}:{name}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(base_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, name))
