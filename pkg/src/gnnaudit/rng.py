"""Deterministic, purpose-tagged random streams.

Every stochastic choice in the toolkit draws from a stream keyed by
(run seed, purpose tag), so two runs with the same seed consume identical
randomness regardless of how other components interleave.
"""

import hashlib

import numpy as np


def _tag_to_int(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, tag: str) -> np.random.Generator:
    """Return an independent generator for the given (seed, tag) pair."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_tag_to_int(tag),))
    return np.random.default_rng(ss)
