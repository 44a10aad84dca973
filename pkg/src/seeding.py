"""Independent random streams derived from one root seed.

Each component draws from a generator seeded by hashing (root, component, index),
so adding a new consumer never shifts the numbers an existing one sees.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, component: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{root_seed}:{component}:{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(root_seed: int, component: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, component, index))
