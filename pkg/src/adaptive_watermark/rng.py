"""Seedable, platform-independent random number generation.

Token sampling draws from xoshiro256** (Blackman & Vigna). The 256-bit state
is filled from a 64-bit seed with four consecutive SplitMix64 outputs, so a
draw sequence is fully determined by the seed and can be reproduced in any
language with 64-bit unsigned arithmetic:

    splitmix64:  x += 0x9E3779B97F4A7C15
                 z = x
                 z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                 z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                 return z ^ (z >> 31)

    next():      result = rotl(s1 * 5, 7) * 9
                 t = s1 << 17
                 s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
                 s2 ^= t;  s3 = rotl(s3, 45)

    random():    (next() >> 11) * 2**-53        # uniform in [0, 1)

Labelled sub-seeds come from ``derive_seed(seed, label)``: the first eight
bytes (little-endian) of SHA-256 over ``"{seed}:{label}"``.  Bulk arrays
(embedding tables, weight init, minibatch order) use numpy's PCG64 seeded
with such a derived seed.
"""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x):
    """Return ``(new_state, output)`` for one SplitMix64 step."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def mix64(*values):
    """Hash a tuple of non-negative integers into one 64-bit value."""
    state = 0
    out = 0
    for v in values:
        state, out = splitmix64((state ^ (int(v) & MASK64)) & MASK64)
        state = out
    return out


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def derive_seed(seed, label):
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Xoshiro256:
    """xoshiro256** generator with SplitMix64 seeding."""

    def __init__(self, seed=0):
        self.seed = int(seed) & MASK64
        x = self.seed
        state = []
        for _ in range(4):
            x, z = splitmix64(x)
            state.append(z)
        if not any(state):
            state[0] = 1
        self.s = state

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def spawn(self, label):
        return Xoshiro256(derive_seed(self.seed, label))

    def numpy(self, label="numpy"):
        """A numpy Generator seeded from this stream's seed and ``label``."""
        return np.random.Generator(np.random.PCG64(derive_seed(self.seed, label)))

    def getstate(self):
        return tuple(self.s)

    def __repr__(self):
        return f"Xoshiro256(seed={self.seed})"


def as_rng(rng):
    """Accept an int seed, None, or an existing generator."""
    if isinstance(rng, Xoshiro256):
        return rng
    if rng is None:
        return Xoshiro256(0)
    return Xoshiro256(int(rng))


def random_keys(seed, n):
    """``n`` pseudo-random 64-bit keys from a fresh stream, as a uint64 array."""
    g = Xoshiro256(seed)
    return np.array([g.next_u64() for _ in range(n)], dtype=np.uint64)
