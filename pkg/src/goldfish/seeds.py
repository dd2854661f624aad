"""Deterministic RNG derivation.

Every stochastic operation in the simulator draws from a generator derived
from the run seed plus a context key (round, client id, shard id, ...).
Results are therefore independent of execution order, which keeps
concurrently scheduled client/shard training reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: int | str) -> int:
    """Mix an arbitrary key tuple into a stable 64-bit seed."""
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(*parts: int | str) -> np.random.Generator:
    """Generator seeded from `derive_seed(*parts)`; platform independent."""
    return np.random.default_rng(derive_seed(*parts))
