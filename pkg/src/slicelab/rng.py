"""Counter-based deterministic random number generator.

All stochastic parts of this project (synthetic data generation, batch
sampling) draw from this generator rather than a library RNG so that any
language can reproduce the exact streams. The algorithm is SplitMix64 in
counter mode and is documented in ``docs/rng.md``; fixed test vectors are
shipped in ``tests/test_rng.py``.

Definition, all arithmetic modulo 2**64:

    GAMMA = 0x9E3779B97F4A7C15
    value(seed, i) = mix64(seed + (i + 1) * GAMMA)      # i = 0, 1, 2, ...

    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

This reproduces the canonical sequential SplitMix64 stream for the same
seed, but any counter position can be evaluated independently.

Derived quantities:
    uniform(i)  = (value(i) >> 11) * 2**-53                  # in [0, 1)
    normal pair from counters (2k, 2k+1), Box-Muller:
        r  = sqrt(-2 * ln(1 - u0))
        z0 = r * cos(2*pi*u1),  z1 = r * sin(2*pi*u1)
    randint(i, n) = floor(uniform(i) * n)                    # in [0, n)
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (reference path)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _MUL2) & _MASK
    return z ^ (z >> 31)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def values(seed: int, start: int, count: int) -> np.ndarray:
    """Raw 64-bit outputs for counters ``start .. start+count-1``."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    base = idx * np.uint64(GAMMA) + np.uint64(seed & _MASK)
    return _mix64_vec(base)


def uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """float64 uniforms in [0, 1) from the top 53 bits of each output."""
    return (values(seed, start, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normals(seed: int, start: int, count: int) -> np.ndarray:
    """Standard normals via Box-Muller over consecutive counter pairs.

    Counter ``start`` must be even so that streams are positionally
    reproducible regardless of how draws are chunked.
    """
    if start % 2 != 0:
        raise ValueError("normal draws must start on an even counter")
    pairs = (count + 1) // 2
    u = uniforms(seed, start, 2 * pairs)
    u0, u1 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u0))
    theta = 2.0 * np.pi * u1
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count]


class Stream:
    """Sequential view over the counter-based generator.

    Tracks the next unused counter; every draw advances it by the number
    of counters consumed, so a (seed, draw-order) pair fully determines
    all results.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & _MASK
        self.counter = counter

    def u64(self, count: int) -> np.ndarray:
        out = values(self.seed, self.counter, count)
        self.counter += count
        return out

    def uniform(self, count: int) -> np.ndarray:
        out = uniforms(self.seed, self.counter, count)
        self.counter += count
        return out

    def normal(self, count: int) -> np.ndarray:
        if self.counter % 2 != 0:
            self.counter += 1
        out = normals(self.seed, self.counter, count)
        self.counter += 2 * ((count + 1) // 2)
        return out

    def randint(self, n: int, count: int) -> np.ndarray:
        """Integers in [0, n) via floor(u * n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return np.minimum((self.uniform(count) * n).astype(np.int64), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Shuffle of arange(n): stable argsort of n raw 64-bit keys."""
        keys = self.u64(n)
        return np.argsort(keys, kind="stable").astype(np.int64)

    def spawn(self, label: int) -> "Stream":
        """Independent child stream keyed by an integer label."""
        return Stream(mix64(self.seed ^ mix64(label)), 0)
