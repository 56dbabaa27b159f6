"""Keyed random substreams.

Every stochastic decision draws from a generator derived from the global seed
and a tuple of keys (pairing id, tree id, choice index, ...), so results do not
depend on execution order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_id(*keys) -> str:
    return "/".join(str(k) for k in keys)


def derive_seed(seed: int, *keys) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode())
    return int.from_bytes(h.digest(), "little")


class Stream:
    """A numpy Generator that counts how many draws were taken from it."""

    def __init__(self, seed: int, *keys):
        self.seed = int(seed)
        self.id = stream_id(*keys)
        self._gen = np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))
        self.draws = 0

    def integers(self, high: int) -> int:
        self.draws += 1
        return int(self._gen.integers(high))

    def random(self, size: int | None = None):
        self.draws += 1 if size is None else size
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += n
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        self.draws += size
        return self._gen.choice(n, size=size, replace=replace)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def trace(self) -> dict:
        return {"substream": self.id, "draws": self.draws}


def substream(seed: int, *keys) -> Stream:
    return Stream(seed, *keys)
