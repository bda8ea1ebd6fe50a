"""Counter-based random numbers.

Each random value is a pure function of ``(seed, pixel, pass, stream, index)``
so renders do not depend on how pixels are scheduled across workers.  The
hash is lowbias32; multiplications are split into 16-bit halves so every
intermediate fits in a signed 64-bit integer, which keeps numba and the
pure-python fallback bit-identical.
"""

import numpy as np

from ._jit import njit

MASK32 = 0xFFFFFFFF
INV_2_32 = 1.0 / 4294967296.0


@njit(inline="always")
def _mul32(x, c):
    lo = c & 0xFFFF
    hi = c >> 16
    return (x * lo + (((x * hi) & 0xFFFF) << 16)) & MASK32


@njit(inline="always")
def hash32(x):
    x = x & MASK32
    x ^= x >> 16
    x = _mul32(x, 0x7FEB352D)
    x ^= x >> 15
    x = _mul32(x, 0x846CA68B)
    x ^= x >> 16
    return x


@njit
def stream_key(seed, pixel, pass_idx, stream):
    k = hash32(seed)
    k = hash32(k ^ (pixel & MASK32))
    k = hash32(k ^ (pixel >> 32))
    k = hash32(k ^ (pass_idx & MASK32))
    return hash32(k ^ (stream & MASK32))


@njit
def new_state(seed, pixel, pass_idx, stream):
    """Sampler state: ``[key, counter]``."""
    st = np.zeros(2, dtype=np.int64)
    st[0] = stream_key(seed, pixel, pass_idx, stream)
    return st


@njit(inline="always")
def next_float(st):
    v = hash32(st[0] ^ hash32(st[1] + 0x2545F491))
    st[1] += 1
    return v * INV_2_32


def uniforms(seed, pixel, pass_idx, stream, n):
    """Python helper used by tests: the first ``n`` draws of a stream."""
    st = new_state(seed, pixel, pass_idx, stream)
    return np.array([next_float(st) for _ in range(n)])
