"""Named, counter-based random substreams.

Every consumer of randomness asks for a stream by name, e.g.
``streams.get("iter", 3, "type", 1, "adapt")``.  The stream is a Philox
generator keyed by the root seed and a hash of the name path, so the numbers
a component sees never depend on how many draws other components made or in
what order parallel workers ran.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["Streams", "as_generator"]


def _name_words(names) -> tuple[int, ...]:
    words = []
    for name in names:
        if isinstance(name, (int, np.integer)):
            if name < 0:
                raise ValueError("stream indices must be non-negative")
            words.append(int(name) & 0xFFFFFFFF)
            words.append(int(name) >> 32)
        else:
            digest = hashlib.blake2b(str(name).encode(), digest_size=8).digest()
            words.append(int.from_bytes(digest[:4], "little"))
            words.append(int.from_bytes(digest[4:], "little"))
    return tuple(words)


class Streams:
    """Factory of independent generators derived from one 64-bit root seed."""

    def __init__(self, seed: int, prefix: tuple = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned value, got {seed}")
        self.seed = int(seed)
        self.prefix = tuple(prefix)

    def get(self, *names) -> np.random.Generator:
        key = _name_words(self.prefix + names)
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *names) -> "Streams":
        return Streams(self.seed, self.prefix + names)

    def __repr__(self):
        return f"Streams(seed={self.seed}, prefix={self.prefix!r})"


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a Streams object or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Streams):
        return rng.get()
    return np.random.default_rng(rng)
