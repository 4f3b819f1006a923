"""Stable seed derivation so every subsystem gets its own replayable stream."""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(root, *labels) -> int:
    """Hash ``root`` and a sequence of labels into a 63-bit seed.

    Uses blake2b rather than ``hash()`` so results do not depend on
    PYTHONHASHSEED.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little") & (_MASK64 >> 1)


def make_rng(root, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
