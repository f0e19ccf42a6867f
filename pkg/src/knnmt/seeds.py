"""Seed derivation: one integer seed expands into independent per-stage seeds.

``derive_seed(seed, "train_index")`` feeds ``[seed, crc32(label)]`` into a
numpy ``SeedSequence`` and takes its first 32-bit word. Labels are plain
strings such as ``"keys"``, ``"train_index"`` or ``"pq/3"``.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
