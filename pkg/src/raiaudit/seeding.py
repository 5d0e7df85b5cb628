"""Stable seed derivation. Seeds never depend on hash randomization or iteration order."""
import hashlib

import numpy as np


def mix_seed(*parts) -> int:
    """Derive a 64-bit seed from arbitrary parts via blake2b over their repr."""
    h = hashlib.blake2b(digest_size=8, person=b"raiaudit-seed")
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
