"""Equirectangular HDR environment light.

Row 0 is the +Z pole; ``theta`` runs down the rows and ``phi`` across the
columns, ``dir = (sin t cos p, sin t sin p, cos t)``.  Lookups are bilinear
between texel centres, wrapping in phi and clamping in theta.

Sampling is texel-discrete: a texel is chosen with probability proportional
to luminance times its solid angle, then a direction is drawn uniformly in
solid angle inside it.  A small uniform-sphere component (``DEFENSIVE``)
keeps the density positive wherever bilinear filtering can leak light from a
lit texel into a black neighbour.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._jit import njit

log = logging.getLogger(__name__)

HEIGHT = 256
WIDTH = 512
DEFENSIVE = 1e-4
INIT_VALUE = 0.5


def texel_solid_angles(h: int, w: int) -> np.ndarray:
    """(h,) exact solid angle of one texel in each row."""
    edges = np.cos(np.linspace(0.0, np.pi, h + 1))
    return (2.0 * np.pi / w) * (edges[:-1] - edges[1:])


@dataclass
class EnvMap:
    radiance: np.ndarray
    marginal_cdf: np.ndarray = field(default=None, repr=False)
    conditional_cdf: np.ndarray = field(default=None, repr=False)
    pdf_table: np.ndarray = field(default=None, repr=False)
    total_weight: float = 0.0
    uniform_fallback: bool = False

    def __post_init__(self):
        rad = np.asarray(self.radiance, dtype=np.float64)
        if rad.ndim != 3 or rad.shape[2] != 3:
            raise ValueError(f"radiance must be (H, W, 3), got {rad.shape}")
        self.radiance = np.ascontiguousarray(np.maximum(rad, 0.0))
        if self.marginal_cdf is None:
            build_sampling_table(self)

    @classmethod
    def constant(cls, value=INIT_VALUE, height=HEIGHT, width=WIDTH):
        rgb = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls(np.tile(rgb, (height, width, 1)))

    @property
    def shape(self):
        return self.radiance.shape[:2]

    def copy(self):
        return EnvMap(self.radiance.copy())

    def kernel_tuple(self):
        return (self.radiance, self.marginal_cdf, self.conditional_cdf, self.pdf_table)

    def total_power(self) -> np.ndarray:
        """Integral of radiance over the sphere, per channel."""
        om = texel_solid_angles(*self.shape)
        return (self.radiance * om[:, None, None]).sum(axis=(0, 1))

    def clamp_(self):
        np.maximum(self.radiance, 0.0, out=self.radiance)
        return self


def build_sampling_table(env: EnvMap) -> EnvMap:
    h, w = env.shape
    om = texel_solid_angles(h, w)
    lum = env.radiance.mean(axis=2) * om[:, None]
    total = float(lum.sum())
    area = np.broadcast_to(om[:, None] / (4.0 * np.pi), (h, w))
    env.total_weight = total
    env.uniform_fallback = not (total > 0.0 and np.isfinite(total))
    if env.uniform_fallback:
        log.warning("environment map has no energy, sampling the sphere uniformly")
        prob = area.copy()
    else:
        prob = (1.0 - DEFENSIVE) * lum / total + DEFENSIVE * area
    row = prob.sum(axis=1)
    mcdf = np.cumsum(row)
    mcdf /= mcdf[-1]
    ccdf = np.cumsum(prob, axis=1)
    ccdf /= ccdf[:, -1:]
    env.marginal_cdf = np.ascontiguousarray(mcdf)
    env.conditional_cdf = np.ascontiguousarray(ccdf)
    # probability actually realized by the sampler (after cdf normalisation)
    row_p = np.diff(np.concatenate([[0.0], mcdf]))
    col_p = np.diff(np.concatenate([np.zeros((h, 1)), ccdf], axis=1), axis=1)
    env.pdf_table = np.ascontiguousarray(row_p[:, None] * col_p / om[:, None])
    return env


# ----------------------------------------------------------------------------
# kernels; ``env`` is EnvMap.kernel_tuple()


@njit(inline="always")
def dir_to_uv(d):
    """(theta / pi, phi / 2pi) in [0, 1]."""
    z = min(max(d[2], -1.0), 1.0)
    th = math.acos(z)
    ph = math.atan2(d[1], d[0])
    if ph < 0.0:
        ph += 2.0 * math.pi
    return th / math.pi, ph / (2.0 * math.pi)


@njit(inline="always")
def footprint(h, w, d):
    """Bilinear taps: (row0, row1, col0, col1, row weight of row1, col weight of col1)."""
    v, u = dir_to_uv(d)
    fy = v * h - 0.5
    fx = u * w - 0.5
    if fy <= 0.0:
        i0, i1, ay = 0, 0, 0.0
    elif fy >= h - 1:
        i0, i1, ay = h - 1, h - 1, 0.0
    else:
        i0 = int(fy)
        i1 = i0 + 1
        ay = fy - i0
    jf = math.floor(fx)
    ax = fx - jf
    j0 = int(jf) % w
    j1 = (j0 + 1) % w
    return i0, i1, j0, j1, ay, ax


@njit
def env_eval(env, d):
    rad = env[0]
    h, w = rad.shape[0], rad.shape[1]
    i0, i1, j0, j1, ay, ax = footprint(h, w, d)
    w00 = (1.0 - ay) * (1.0 - ax)
    w01 = (1.0 - ay) * ax
    w10 = ay * (1.0 - ax)
    w11 = ay * ax
    return (
        w00 * rad[i0, j0, 0] + w01 * rad[i0, j1, 0] + w10 * rad[i1, j0, 0] + w11 * rad[i1, j1, 0],
        w00 * rad[i0, j0, 1] + w01 * rad[i0, j1, 1] + w10 * rad[i1, j0, 1] + w11 * rad[i1, j1, 1],
        w00 * rad[i0, j0, 2] + w01 * rad[i0, j1, 2] + w10 * rad[i1, j0, 2] + w11 * rad[i1, j1, 2],
    )


@njit
def env_pdf(env, d):
    tab = env[3]
    h, w = tab.shape[0], tab.shape[1]
    v, u = dir_to_uv(d)
    i = min(int(v * h), h - 1)
    j = min(int(u * w), w - 1)
    return tab[i, j]


@njit(inline="always")
def _search(cdf, u):
    """First index with cdf[idx] > u."""
    lo = 0
    hi = cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit
def env_sample(env, u1, u2):
    """Returns (dir, pdf, radiance)."""
    mcdf = env[1]
    ccdf = env[2]
    h = ccdf.shape[0]
    w = ccdf.shape[1]
    i = _search(mcdf, u1)
    lo = mcdf[i - 1] if i > 0 else 0.0
    a = (u1 - lo) / (mcdf[i] - lo) if mcdf[i] > lo else 0.5
    j = _search(ccdf[i], u2)
    lo = ccdf[i, j - 1] if j > 0 else 0.0
    b = (u2 - lo) / (ccdf[i, j] - lo) if ccdf[i, j] > lo else 0.5
    c0 = math.cos(math.pi * i / h)
    c1 = math.cos(math.pi * (i + 1) / h)
    z = c0 + a * (c1 - c0)
    s = math.sqrt(max(0.0, 1.0 - z * z))
    ph = 2.0 * math.pi * (j + b) / w
    d = (s * math.cos(ph), s * math.sin(ph), z)
    return d, env_pdf(env, d), env_eval(env, d)


# ----------------------------------------------------------------------------
# numpy-facing API


def _t(v):
    v = np.asarray(v, dtype=np.float64)
    return (float(v[0]), float(v[1]), float(v[2]))


def eval_env(env: EnvMap, d) -> np.ndarray:
    return np.array(env_eval(env.kernel_tuple(), _t(d)))


def pdf_env(env: EnvMap, d) -> float:
    return float(env_pdf(env.kernel_tuple(), _t(d)))


def sample_env(env: EnvMap, u):
    d, p, L = env_sample(env.kernel_tuple(), float(u[0]), float(u[1]))
    return np.array(d), float(p), np.array(L)


@njit
def _sample_many(env, U, out_d, out_p, out_l):
    for k in range(U.shape[0]):
        d, p, L = env_sample(env, U[k, 0], U[k, 1])
        for c in range(3):
            out_d[k, c] = d[c]
            out_l[k, c] = L[c]
        out_p[k] = p


@njit
def _eval_many(env, D, out_l, out_p):
    for k in range(D.shape[0]):
        d = (D[k, 0], D[k, 1], D[k, 2])
        L = env_eval(env, d)
        for c in range(3):
            out_l[k, c] = L[c]
        out_p[k] = env_pdf(env, d)


def sample_env_many(env: EnvMap, U):
    U = np.ascontiguousarray(U, dtype=np.float64)
    d = np.empty((len(U), 3))
    p = np.empty(len(U))
    L = np.empty((len(U), 3))
    _sample_many(env.kernel_tuple(), U, d, p, L)
    return d, p, L


def eval_env_many(env: EnvMap, D):
    """(radiance (n, 3), pdf (n,)) for many directions."""
    D = np.ascontiguousarray(D, dtype=np.float64)
    L = np.empty((len(D), 3))
    p = np.empty(len(D))
    _eval_many(env.kernel_tuple(), D, L, p)
    return L, p


def texel_direction(h, w, i, j):
    th = math.pi * (i + 0.5) / h
    ph = 2.0 * math.pi * (j + 0.5) / w
    return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])


# ----------------------------------------------------------------------------
# Radiance RGBE (.hdr)


def _float_to_rgbe(img):
    v = img.max(axis=2)
    out = np.zeros(img.shape[:2] + (4,), dtype=np.uint8)
    ok = v > 1e-32
    mant, expo = np.frexp(v[ok])
    scale = mant * 256.0 / v[ok]
    out[ok, :3] = np.clip(img[ok] * scale[:, None], 0, 255).astype(np.uint8)
    out[ok, 3] = (expo + 128).astype(np.uint8)
    return out


def _rgbe_to_float(rgbe):
    e = rgbe[..., 3].astype(np.int32)
    f = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return rgbe[..., :3].astype(np.float64) * f[..., None]


def write_hdr(path, img):
    img = np.maximum(np.asarray(img, dtype=np.float64), 0.0)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {h} +X {w}\n".encode())
        f.write(_float_to_rgbe(img).tobytes())


def _read_rle_scanline(buf, pos, w):
    line = np.empty((4, w), dtype=np.uint8)
    for c in range(4):
        x = 0
        while x < w:
            n = buf[pos]
            pos += 1
            if n > 128:
                n -= 128
                line[c, x : x + n] = buf[pos]
                pos += 1
            else:
                line[c, x : x + n] = np.frombuffer(buf, np.uint8, n, pos)
                pos += n
            x += n
    return line.T, pos


def read_hdr(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not (data.startswith(b"#?RADIANCE") or data.startswith(b"#?RGBE")):
        raise ValueError(f"{path}: not a Radiance HDR file")
    end = data.index(b"\n\n") + 2
    nl = data.index(b"\n", end)
    m = re.match(rb"-Y (\d+) \+X (\d+)", data[end:nl])
    if m is None:
        raise ValueError(f"{path}: unsupported orientation {data[end:nl]!r}")
    h, w = int(m.group(1)), int(m.group(2))
    pos = nl + 1
    out = np.empty((h, w, 4), dtype=np.uint8)
    for y in range(h):
        if 8 <= w < 32768 and data[pos] == 2 and data[pos + 1] == 2 and ((data[pos + 2] << 8) | data[pos + 3]) == w:
            out[y], pos = _read_rle_scanline(data, pos + 4, w)
        else:
            out[y] = np.frombuffer(data, np.uint8, w * 4, pos).reshape(w, 4)
            pos += w * 4
    return _rgbe_to_float(out)


def load_envmap(path) -> EnvMap:
    return EnvMap(read_hdr(path))


def save_envmap(path, env: EnvMap):
    write_hdr(path, env.radiance)
