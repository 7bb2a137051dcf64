"""Portable seeded random stream (SplitMix64).

The generator is fully specified here so that other implementations can
reproduce every stream bit for bit:

* state: a 64-bit ``seed`` and a draw ``counter`` (starts at 0).
* raw draw ``i`` (0-based): ``z = seed + GAMMA * (i + 1) mod 2**64`` passed
  through ``mix``: ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
  z *= 0x94D049BB133111EB; z ^= z >> 31`` (all mod 2**64).
* uniform: ``(raw >> 11) * 2**-53`` in [0, 1).
* normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``:
  ``r = sqrt(-2 ln(1 - u1))``, giving ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``.
  An odd request discards the unused sine value.
* integer below ``n``: ``floor(u * n)``.
* permutation / choice: Fisher-Yates, forward form; position ``i`` swaps with
  ``i + floor(u * (n - i))``.
* ``substream(key)``: a fresh stream seeded with
  ``mix((seed ^ SPLIT) + GAMMA * (key + 1))``; it does not advance the parent.
"""
import math

import numpy as np

from .errors import UsageError

GAMMA = 0x9E3779B97F4A7C15
SPLIT = 0x6A09E667F3BCC909
MASK64 = (1 << 64) - 1

_G = np.uint64(GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix_array(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class RNG:
    """Counter-based SplitMix64 stream with numpy-vectorized draws."""

    def __init__(self, seed=0, counter=0):
        self.seed = int(seed) & MASK64
        self.counter = int(counter)

    def __repr__(self):
        return f"RNG(seed={self.seed}, counter={self.counter})"

    def raw(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + _G * idx
            out = _mix_array(z)
        self.counter += n
        return out

    def uniform(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(2 * ((n + 1) // 2)).reshape(-1, 2)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, n, size=None):
        u = self.uniform(size if size is not None else 1)
        k = np.floor(np.asarray(u) * n).astype(np.int64)
        return int(k.reshape(-1)[0]) if size is None else k

    def choice(self, n, k):
        """``k`` distinct indices from ``range(n)`` in draw order."""
        if not 0 <= k <= n:
            raise UsageError(f"cannot choose {k} of {n}")
        pool = list(range(n))
        if k == 0:
            return np.array([], dtype=np.int64)
        u = self.uniform(k)
        for i in range(k):
            j = i + int(math.floor(u[i] * (n - i)))
            pool[i], pool[j] = pool[j], pool[i]
        return np.array(pool[:k], dtype=np.int64)

    def permutation(self, n):
        return self.choice(n, n)

    def substream(self, key):
        child = mix64(((self.seed ^ SPLIT) + GAMMA * (int(key) + 1)) & MASK64)
        return RNG(child)

    def state(self):
        return self.seed, self.counter
