"""Small 3-vector helpers on tuples, inlined into the kernels."""

import math

from ._jit import njit


@njit(inline="always")
def v3(x, y, z):
    return (x, y, z)


@njit(inline="always")
def add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@njit(inline="always")
def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@njit(inline="always")
def mul(a, b):
    return (a[0] * b[0], a[1] * b[1], a[2] * b[2])


@njit(inline="always")
def scale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@njit(inline="always")
def madd(a, b, s):
    """a + b * s"""
    return (a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s)


@njit(inline="always")
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(inline="always")
def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


@njit(inline="always")
def length(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit(inline="always")
def normalize(a):
    n = math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    if n == 0.0:
        return (0.0, 0.0, 1.0)
    inv = 1.0 / n
    return (a[0] * inv, a[1] * inv, a[2] * inv)


@njit(inline="always")
def neg(a):
    return (-a[0], -a[1], -a[2])


@njit(inline="always")
def lum(c):
    """Scalar luminance used throughout: the channel mean."""
    return (c[0] + c[1] + c[2]) * (1.0 / 3.0)


@njit(inline="always")
def onb(n):
    """Orthonormal tangent frame around unit ``n`` (Duff et al. 2017)."""
    sign = 1.0 if n[2] >= 0.0 else -1.0
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    t = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    bt = (b, sign + n[1] * n[1] * a, -n[1])
    return t, bt


@njit(inline="always")
def to_world(local, t, bt, n):
    return (
        local[0] * t[0] + local[1] * bt[0] + local[2] * n[0],
        local[0] * t[1] + local[1] * bt[1] + local[2] * n[1],
        local[0] * t[2] + local[1] * bt[2] + local[2] * n[2],
    )


@njit(inline="always")
def reflect(wo, n):
    d = 2.0 * dot(wo, n)
    return (n[0] * d - wo[0], n[1] * d - wo[1], n[2] * d - wo[2])


@njit(inline="always")
def row3(a, i):
    return (a[i, 0], a[i, 1], a[i, 2])
