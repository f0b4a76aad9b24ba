"""Deterministic named RNG sub-streams derived from one 64-bit master seed.

Every random draw in the package flows from ``substream(seed, name)`` so that
a whole multi-restart run is reproducible from a single integer.  Stream
names are hashed with BLAKE2 (stable across platforms and processes, unlike
``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> tuple[int, int]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    lo = int.from_bytes(digest[:4], "little")
    hi = int.from_bytes(digest[4:], "little")
    return lo, hi


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the named sub-stream of ``seed``.

    The same (seed, name) pair always yields an identical stream; distinct
    names yield statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=_name_key(name))
    return np.random.default_rng(seq)
