"""Named, splittable random streams backed by a counter-based generator.

Every stochastic call site in the package takes an explicit stream, and a
stream is derived purely from a seed plus a path of names, so results are
bitwise reproducible regardless of call order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_KEY_BYTES = 32


def _derive_key(parent_key: bytes, parts: tuple) -> bytes:
    h = hashlib.blake2b(parent_key, digest_size=_KEY_BYTES)
    for part in parts:
        if isinstance(part, str):
            token = b"s:" + part.encode("utf-8")
        elif isinstance(part, (int, np.integer)):
            token = b"i:" + int(part).to_bytes(16, "little", signed=True)
        else:
            raise TypeError(f"stream names must be str or int, got {type(part).__name__}")
        h.update(len(token).to_bytes(4, "little"))
        h.update(token)
    return h.digest()


class Stream:
    """One independent random stream (Philox counter-based generator).

    Use ``child(*names)`` to split off statistically independent substreams;
    children with distinct name paths never collide.
    """

    def __init__(self, key: bytes, path: str = ""):
        if len(key) != _KEY_BYTES:
            raise ValueError("stream key must be 32 bytes")
        self._key = key
        self.path = path
        # Philox takes a 128-bit key; the remaining digest bytes only feed
        # child-stream derivation.
        self.gen = np.random.Generator(
            np.random.Philox(key=int.from_bytes(key[:16], "little"))
        )

    @classmethod
    def from_seed(cls, seed: int) -> "Stream":
        root = hashlib.blake2b(
            int(seed).to_bytes(16, "little", signed=True), digest_size=_KEY_BYTES
        ).digest()
        return cls(root, path=f"seed:{seed}")

    def child(self, *names) -> "Stream":
        suffix = "/".join(str(n) for n in names)
        return Stream(_derive_key(self._key, tuple(names)), path=f"{self.path}/{suffix}")

    def __getattr__(self, name):
        # Delegate draws (integers, uniform, normal, permutation, ...) to numpy.
        return getattr(self.gen, name)

    def __repr__(self):
        return f"Stream({self.path!r})"
