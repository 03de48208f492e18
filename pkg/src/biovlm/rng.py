"""Deterministic random streams.

All randomness in the package flows from a single root seed. Consumers derive
independent streams by hashing the root seed together with a tuple of string
or integer tags (e.g. ``("weights", "text", layer)``). The underlying bit
generator is Philox, a counter-based generator whose output is a pure function
of its 128-bit key, so identical (seed, tags) produce identical streams across
processes and platforms.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

__all__ = ["derive_key", "generator", "normals", "uniforms"]


def derive_key(root_seed: int, *tags: int | str) -> int:
    """Hash (root_seed, tags) into a 128-bit Philox key."""
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<q", int(root_seed) & 0x7FFFFFFFFFFFFFFF))
    for tag in tags:
        if isinstance(tag, str):
            h.update(b"s")
            h.update(tag.encode("utf-8"))
        else:
            h.update(b"i")
            h.update(struct.pack("<q", int(tag)))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def generator(root_seed: int, *tags: int | str) -> np.random.Generator:
    """A Philox-backed Generator keyed by (root_seed, tags)."""
    return np.random.Generator(np.random.Philox(key=derive_key(root_seed, *tags)))


def normals(root_seed: int, shape, *tags: int | str, std: float = 1.0) -> np.ndarray:
    """Deterministic standard-normal draws scaled by ``std``, as float64."""
    g = generator(root_seed, *tags)
    return std * g.standard_normal(size=shape, dtype=np.float64)


def uniforms(root_seed: int, shape, *tags: int | str) -> np.ndarray:
    """Deterministic uniform [0, 1) draws, as float64."""
    g = generator(root_seed, *tags)
    return g.random(size=shape, dtype=np.float64)
