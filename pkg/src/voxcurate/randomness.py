"""Seeded RNG derivation.

All sampling derives generators from sha256 of (seed, labels), never from
the builtin hash(), so results are stable across processes and runs.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derived_seed(seed: int, *labels: str) -> int:
    material = ":".join([str(seed), *labels]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def derived_rng(seed: int, *labels: str) -> np.random.Generator:
    return np.random.default_rng(derived_seed(seed, *labels))
