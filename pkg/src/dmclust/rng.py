"""Deterministic random streams.

Every piece of randomness in the library flows from one master seed through
named substreams, so a run is reproducible from (master_seed, stream_name)
alone and adding a new consumer never perturbs existing ones.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream"]


def _digest(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of `master_seed`."""
    seq = np.random.SeedSequence(entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF,
                                 spawn_key=(_digest(name),))
    return np.random.default_rng(seq)
