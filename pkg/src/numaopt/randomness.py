"""Named, reproducible random substreams.

Every source of randomness in a run is derived from one top-level seed and a
stream name, so that components draw from independent sequences and a
component's consumption never perturbs another's.  Names are hashed with
sha256 (never the salted builtin ``hash``) to stay stable across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, *names: str) -> np.random.Generator:
    """Derive an independent generator for ``names`` under ``seed``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_name_key(str(n)) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *names) -> int:
    """Derive a child integer seed for components that take a plain seed."""
    material = ":".join([str(int(seed) & 0xFFFFFFFFFFFFFFFF)] + [str(n) for n in names])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


class UniformBuffer:
    """Block-buffered uniform(0,1) sampler over one substream.

    The per-tick thread-burst simulation consumes a few hundred uniforms per
    container; drawing them in large blocks keeps numpy call overhead out of
    the hot loop.  ``take`` returns a read-only view into the block, valid
    until the next call.
    """

    def __init__(self, rng: np.random.Generator, block: int = 16384):
        self._rng = rng
        self._block = block
        self._buf = rng.random(block)
        self._pos = 0

    def take(self, n: int) -> np.ndarray:
        if n > self._block:
            self._block = 2 * n
        if self._pos + n > len(self._buf):
            self._buf = self._rng.random(self._block)
            self._pos = 0
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out

    def one(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._rng.random(self._block)
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        return float(value)
