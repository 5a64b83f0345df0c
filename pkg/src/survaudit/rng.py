"""Deterministic random stream derivation.

Every random draw in the toolkit comes from a counter-based Philox generator
keyed by a tuple of integers, so the result of one task never depends on
which other tasks ran before it or on which thread ran it.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stage_key(name: str) -> int:
    """Stable 32-bit integer derived from a stage or label name."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")


def keyed_rng(*key: int | str) -> np.random.Generator:
    words = [stage_key(k) if isinstance(k, str) else int(k) for k in key]
    if any(w < 0 for w in words):
        raise ValueError("seed components must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def subseed(seed: int, name: str) -> int:
    """Derive a child seed for a named stage from the run seed."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
