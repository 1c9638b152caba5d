"""Seed derivation for independent per-stage / per-class RNG streams.

Derived seed = first 8 bytes (little-endian) of
sha256("master/part0/part1/..."), so parallel class shards never share a
stream and any stage can be reproduced in isolation from the manifest.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *parts) -> int:
    key = "/".join([str(master), *map(str, parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))
