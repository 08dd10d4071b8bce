"""Deterministic RNG streams derived from one 64-bit seed.

Every consumer asks for ``stream(seed, name, index)``; the stream id is a
stable hash of the consumer name, so results do not depend on the order in
which parallel workers run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_id(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), stream_id(name), int(index)]))
