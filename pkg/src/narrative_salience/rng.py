"""Counter-based random streams keyed by ``(seed, stream name)``."""

from __future__ import annotations

import hashlib

import numpy as np


def _stream_key(seed: int, stream: str) -> int:
    digest = hashlib.blake2b(stream.encode("utf-8"), digest_size=8).digest()
    return ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | int.from_bytes(digest, "little")


class RngState:
    """A Philox stream. Same seed, same stream name, same calls -> same draws.

    ``position`` counts the values drawn so far, which lets callers assert that
    a code path consumed no randomness.
    """

    def __init__(self, seed: int, stream: str = "main"):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream = stream
        self.position = 0
        self._gen = np.random.Generator(np.random.Philox(key=_stream_key(seed, stream)))

    def child(self, name: str) -> "RngState":
        return RngState(self.seed, f"{self.stream}/{name}")

    def random(self, shape) -> np.ndarray:
        out = self._gen.random(shape)
        self.position += out.size
        return out

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        out = self._gen.uniform(low, high, shape)
        self.position += out.size
        return out

    def integers(self, low: int, high: int, shape=None):
        out = self._gen.integers(low, high, size=shape)
        self.position += int(np.size(out))
        return out

    def permutation(self, n: int) -> np.ndarray:
        out = self._gen.permutation(n)
        self.position += n
        return out

    def choice(self, seq, size=None, replace=True):
        out = self._gen.choice(len(seq), size=size, replace=replace)
        self.position += int(np.size(out))
        if size is None:
            return seq[int(out)]
        return [seq[int(i)] for i in np.atleast_1d(out)]

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream!r}, position={self.position})"
