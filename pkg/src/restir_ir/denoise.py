"""Edge-avoiding a-trous wavelet filter guided by normal and position buffers.

Pass ``i`` convolves with the 5x5 B3-spline kernel whose taps are spread
``2**i`` pixels apart.  Each tap is weighted by

    exp(-|tm(c_p) - tm(c_q)|^2 / s_rt^2) * exp(-(1 - n_p.n_q)^2 / s_n^2) * exp(-|x_p - x_q|^2 / s_x^2)

and the result is normalised by the sum of weights.  ``tm`` is the clamped
sRGB curve.  Background pixels (alpha 0) neither receive nor contribute.

The normalised weights of every pass are kept so the filter can be applied
transposed in the backward pass, i.e. weights are constants of the adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import njit, pjit, prange

B3 = np.array([1.0 / 16, 1.0 / 4, 3.0 / 8, 1.0 / 4, 1.0 / 16])
N_TAPS = 25
# default position sensitivity as a fraction of the scene diagonal; at 0.005
# the filter barely touches 64^2 renders of desk-sized objects
SIGMA_X_FRAC = 0.0125


@dataclass
class AtrousParams:
    sigma_rt: float = 0.5
    sigma_n: float = 0.3
    sigma_x: float = 0.01
    iterations: int = 3

    def __post_init__(self):
        if min(self.sigma_rt, self.sigma_n, self.sigma_x) <= 0:
            raise ValueError("sigmas must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @classmethod
    def for_scene(cls, diagonal, sigma_rt=0.5, sigma_n=0.3, sigma_x=None, iterations=3):
        sx = SIGMA_X_FRAC * diagonal if sigma_x is None else sigma_x
        return cls(sigma_rt, sigma_n, sx, iterations)


@dataclass
class AtrousState:
    """Normalised tap weights of each pass, (iterations, H*W, 25)."""

    weights: np.ndarray
    width: int
    height: int


def tap_offsets(i: int):
    """Per-axis tap offsets of pass ``i``."""
    step = 1 << i
    return [-2 * step, -step, 0, step, 2 * step]


@njit(inline="always")
def _tm(x):
    x = min(max(x, 0.0), 1.0)
    if x <= 0.0031308:
        return 12.92 * x
    return 1.055 * x ** (1.0 / 2.4) - 0.055


@pjit
def _weights_pass(color, normal, pos, alpha, width, height, step, inv_rt, inv_n, inv_x, wout):
    for p in prange(width * height):
        for t in range(N_TAPS):
            wout[p, t] = 0.0
        if alpha[p] <= 0.0:
            continue
        px = p % width
        py = p // width
        t0 = _tm(color[p, 0])
        t1 = _tm(color[p, 1])
        t2 = _tm(color[p, 2])
        k = 0.0
        for a in range(5):
            qy = py + (a - 2) * step
            if qy < 0 or qy >= height:
                continue
            for b in range(5):
                qx = px + (b - 2) * step
                if qx < 0 or qx >= width:
                    continue
                q = qy * width + qx
                if alpha[q] <= 0.0:
                    continue
                dc = (t0 - _tm(color[q, 0])) ** 2 + (t1 - _tm(color[q, 1])) ** 2 + (t2 - _tm(color[q, 2])) ** 2
                dn = 1.0 - (normal[p, 0] * normal[q, 0] + normal[p, 1] * normal[q, 1] + normal[p, 2] * normal[q, 2])
                if dn < 0.0:
                    dn = 0.0
                dx = (pos[p, 0] - pos[q, 0]) ** 2 + (pos[p, 1] - pos[q, 1]) ** 2 + (pos[p, 2] - pos[q, 2]) ** 2
                hw = B3[a] * B3[b]
                w = hw * math.exp(-dc * inv_rt - dn * dn * inv_n - dx * inv_x)
                wout[p, a * 5 + b] = w
                k += w
        if k > 0.0:
            for t in range(N_TAPS):
                wout[p, t] /= k


@pjit
def _apply(img, w, width, height, step, out):
    """out[p] = sum_t w[p, t] img[q_t]; pixels without weights pass through."""
    for p in prange(width * height):
        px = p % width
        py = p // width
        s = 0.0
        for t in range(N_TAPS):
            s += w[p, t]
        if s == 0.0:
            for c in range(img.shape[1]):
                out[p, c] = img[p, c]
            continue
        for c in range(img.shape[1]):
            out[p, c] = 0.0
        for a in range(5):
            qy = py + (a - 2) * step
            if qy < 0 or qy >= height:
                continue
            for b in range(5):
                wt = w[p, a * 5 + b]
                if wt == 0.0:
                    continue
                q = qy * width + px + (b - 2) * step
                for c in range(img.shape[1]):
                    out[p, c] += wt * img[q, c]


@njit
def _apply_transposed(g, w, width, height, step, out):
    """Adjoint of :func:`_apply`; sequential so the summation order is fixed."""
    for i in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[i, c] = 0.0
    for p in range(width * height):
        px = p % width
        py = p // width
        s = 0.0
        for t in range(N_TAPS):
            s += w[p, t]
        if s == 0.0:
            for c in range(g.shape[1]):
                out[p, c] += g[p, c]
            continue
        for a in range(5):
            qy = py + (a - 2) * step
            if qy < 0 or qy >= height:
                continue
            for b in range(5):
                wt = w[p, a * 5 + b]
                if wt == 0.0:
                    continue
                q = qy * width + px + (b - 2) * step
                for c in range(g.shape[1]):
                    out[q, c] += wt * g[p, c]


def _inv_sq(s):
    return 1.0 / (s * s)


def atrous_filter(fb, p: AtrousParams, extra=()):
    """Filter ``fb.color``; returns (image, state[, filtered extras]).

    ``extra`` images are filtered with the same weights (e.g. the
    demodulated lighting buffers).
    """
    h, w = fb.color.shape[:2]
    n = h * w
    color = np.ascontiguousarray(fb.color.reshape(n, 3), dtype=np.float64)
    normal = np.ascontiguousarray(fb.normal_aov.reshape(n, 3), dtype=np.float64)
    pos = np.ascontiguousarray(fb.position_aov.reshape(n, 3), dtype=np.float64)
    alpha = np.ascontiguousarray(fb.alpha.reshape(n), dtype=np.float64)
    weights = np.empty((p.iterations, n, N_TAPS))
    ex = [np.ascontiguousarray(np.asarray(e, dtype=np.float64).reshape(n, -1)) for e in extra]
    for i in range(p.iterations):
        step = 1 << i
        _weights_pass(color, normal, pos, alpha, w, h, step, _inv_sq(p.sigma_rt), _inv_sq(p.sigma_n),
                      _inv_sq(p.sigma_x), weights[i])
        nxt = np.empty_like(color)
        _apply(color, weights[i], w, h, step, nxt)
        color = nxt
        for j, e in enumerate(ex):
            o = np.empty_like(e)
            _apply(e, weights[i], w, h, step, o)
            ex[j] = o
    state = AtrousState(weights, w, h)
    out = color.reshape(h, w, 3)
    if extra:
        return out, state, [e.reshape(h, w, -1) for e in ex]
    return out, state


def atrous_backward(state: AtrousState, g_out):
    """Gradient w.r.t. the filter input given the gradient of its output."""
    n = state.width * state.height
    g = np.ascontiguousarray(np.asarray(g_out, dtype=np.float64).reshape(n, -1))
    for i in reversed(range(state.weights.shape[0])):
        nxt = np.empty_like(g)
        _apply_transposed(g, state.weights[i], state.width, state.height, 1 << i, nxt)
        g = nxt
    return g.reshape(np.shape(g_out))


def apply_state(state: AtrousState, img):
    """Re-apply stored weights to another image (a linear map)."""
    n = state.width * state.height
    x = np.ascontiguousarray(np.asarray(img, dtype=np.float64).reshape(n, -1))
    for i in range(state.weights.shape[0]):
        o = np.empty_like(x)
        _apply(x, state.weights[i], state.width, state.height, 1 << i, o)
        x = o
    return x.reshape(np.shape(img))
