"""Seeded, splittable random streams.

Every stochastic choice draws from a Philox counter-based generator whose key
is derived from ``(seed, label)``.  Labels are hashed with SHA-256, so a
subsystem's stream depends only on the run seed and its own label, never on
how many numbers other subsystems consumed.
"""

import hashlib

import numpy as np


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive(seed: int, label: str) -> np.random.Generator:
    """Return an independent generator for ``label`` under ``seed``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, *_label_words(label)])
    return np.random.Generator(np.random.Philox(ss))
