"""Deterministic counter-based random streams.

Every random draw in the perturbation pipeline comes from a Philox stream
whose key is derived from (master seed, frame key, mutation index, feature
index). Draws are therefore independent of evaluation order, worker count,
and scheduling. Python's built-in hash() is salted per process, so string
keys are hashed with BLAKE2 instead.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1
#: Reserved feature index for one-draw-per-frame streams.
_FRAME_SLOT = _U64


def stable_key(text: str) -> int:
    """Platform-stable 64-bit hash of a string."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def philox_stream(*key_parts: int) -> np.random.Generator:
    """A Generator over a Philox counter stream keyed by integer parts."""
    raw = b"".join((int(p) & _U64).to_bytes(8, "little") for p in key_parts)
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class MutationStream:
    """Random streams for one mutation applied to one frame."""

    master_seed: int
    frame_key: int
    mutation_index: int

    def frame(self) -> np.random.Generator:
        """Stream for draws made once per frame."""
        return philox_stream(self.master_seed, self.frame_key, self.mutation_index, _FRAME_SLOT)

    def feature(self, index: int) -> np.random.Generator:
        """Stream for draws tied to the feature at the given index."""
        if not 0 <= index < _FRAME_SLOT:
            raise ValueError(f"feature index out of range: {index}")
        return philox_stream(self.master_seed, self.frame_key, self.mutation_index, index)
