"""Counter-based Gaussian streams.

Every draw is a pure function of ``(key, counter)``: the 64-bit key names the
stream, the counter is the integration step. Uniforms come from the SplitMix64
finalizer and are turned into normals with the Box-Muller transform, so a
trajectory can be regenerated from any step without replaying the ones before
it and independent streams never share state.
"""

import hashlib
import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform draw in the open interval (0, 1)."""
    z = mix64(key + (counter + np.uint64(1)) * _GOLDEN)
    return ((z >> _S11) + 0.5) * _TWO_M53


@nb.njit(cache=True)
def normal3(key, step):
    """Three independent standard normals for integration step ``step``."""
    base = np.uint64(step) * np.uint64(4)
    u1 = uniform(key, base)
    u2 = uniform(key, base + np.uint64(1))
    u3 = uniform(key, base + np.uint64(2))
    u4 = uniform(key, base + np.uint64(3))
    r1 = math.sqrt(-2.0 * math.log(u1))
    r2 = math.sqrt(-2.0 * math.log(u3))
    a1 = 2.0 * math.pi * u2
    a2 = 2.0 * math.pi * u4
    return r1 * math.cos(a1), r1 * math.sin(a1), r2 * math.cos(a2)


@nb.njit(cache=True)
def _fill_normals(key, step0, n, out):
    for i in range(n):
        g0, g1, g2 = normal3(key, step0 + i)
        out[i, 0] = g0
        out[i, 1] = g1
        out[i, 2] = g2


def stream_key(seed, name=""):
    """Derive a 64-bit stream key from an integer seed and a stream name.

    The name separates devices that share a seed (``"N1"``, ``"run7/dev0"``).
    """
    digest = hashlib.blake2b(f"{int(seed)}/{name}".encode(), digest_size=8).digest()
    return np.uint64(int.from_bytes(digest, "little"))


def derive_seed(seed, *parts):
    """Child seed for run ``parts`` of an experiment seeded with ``seed``."""
    return int(stream_key(seed, "/".join(str(p) for p in parts)))


class GaussianStream:
    """Named, seedable stream of 3-vectors of standard normals.

    ``draw(step)`` is idempotent: the same step always returns the same
    vector. ``next()`` walks the counter forward.
    """

    def __init__(self, seed, name=""):
        self.seed = int(seed)
        self.name = name
        self.key = stream_key(seed, name)
        self.counter = 0

    def draw(self, step):
        return np.array(normal3(self.key, np.uint64(step)))

    def next(self):
        v = self.draw(self.counter)
        self.counter += 1
        return v

    def block(self, step0, n):
        out = np.empty((n, 3))
        _fill_normals(self.key, np.uint64(step0), n, out)
        return out
