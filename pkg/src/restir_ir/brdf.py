"""Metallic-roughness BRDF: Lambert diffuse + GGX specular.

Specular: GGX normal distribution, Schlick Fresnel with
``F0 = mix(0.04 * specular, albedo, metallic)``, height-correlated Smith
masking.  ``specular`` is a scene-wide dielectric reflectance scale; at 0 a
non-metal is exactly Lambertian.

The diffuse lobe is coupled to the specular one so that energy is conserved:
it is weighted by ``(1 - s E(mu_o)) (1 - s E(mu_i)) / (1 - s E_avg)`` where
``E`` is the tabulated directional albedo of the dielectric specular lobe.
With albedo 1 and no metal the hemispherical reflectance is 1 up to table
error, and never exceeds it.

Material tuples are ``(r, g, b, roughness, metallic)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._jit import njit
from .mesh import R_MIN
from .vecmath import dot, normalize, onb, to_world, add

INV_PI = 1.0 / math.pi
DIELECTRIC_F0 = 0.04
LOBE_PROB = 0.5  # diffuse vs specular selection in the sampling mixture

N_MU = 64  # table rows, uniform in sqrt(mu)
N_ROUGH = 64  # table columns, uniform in roughness over [R_MIN, 1]
_TABLE_PATH = Path(__file__).with_name("data") / "ggx_dielectric_albedo.npy"


@dataclass
class MaterialAttrib:
    albedo: tuple = (0.5, 0.5, 0.5)
    roughness: float = 0.5
    metallic: float = 0.0

    def __post_init__(self):
        self.albedo = tuple(float(np.clip(a, 0.0, 1.0)) for a in self.albedo)
        self.roughness = float(np.clip(self.roughness, R_MIN, 1.0))
        self.metallic = float(np.clip(self.metallic, 0.0, 1.0))

    def as_tuple(self):
        return (*self.albedo, self.roughness, self.metallic)

    def as_array(self):
        return np.array(self.as_tuple())


# ----------------------------------------------------------------------------
# directional albedo table of the dielectric specular lobe


@njit
def _spec_albedo(mu, rough, k):
    """Stratified GGX-importance-sampled quadrature, k*k samples."""
    a = rough * rough
    a2 = a * a
    wo = (math.sqrt(max(0.0, 1.0 - mu * mu)), 0.0, mu)
    acc = 0.0
    for i in range(k):
        u1 = (i + 0.5) / k
        cos_h = math.sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
        sin_h = math.sqrt(max(0.0, 1.0 - cos_h * cos_h))
        for j in range(k):
            phi = 2.0 * math.pi * (j + 0.5) / k
            h = (sin_h * math.cos(phi), sin_h * math.sin(phi), cos_h)
            vh = dot(wo, h)
            if vh <= 0.0:
                continue
            nl = 2.0 * vh * h[2] - wo[2]
            if nl <= 0.0:
                continue
            nv = mu
            vis = 0.5 / (nl * math.sqrt(nv * nv * (1.0 - a2) + a2) + nv * math.sqrt(nl * nl * (1.0 - a2) + a2))
            f = DIELECTRIC_F0 + (1.0 - DIELECTRIC_F0) * (1.0 - vh) ** 5
            acc += 4.0 * vis * f * nl * vh / cos_h
    return acc / (k * k)


def compute_albedo_table(k=256):
    tab = np.empty((N_MU, N_ROUGH))
    for i in range(N_MU):
        t = i / (N_MU - 1)
        mu = max(t * t, 1e-6)
        for j in range(N_ROUGH):
            r = R_MIN + (1.0 - R_MIN) * j / (N_ROUGH - 1)
            tab[i, j] = _spec_albedo(mu, r, k)
    return tab


def _cosine_average(tab):
    """Exact 2*int E(mu) mu dmu for E piecewise linear in t = sqrt(mu)."""
    # integrand E(t) * 4 t^3 dt, degree 4 per segment -> 3-point Gauss-Legendre is exact
    xg, wg = np.polynomial.legendre.leggauss(3)
    h = 1.0 / (N_MU - 1)
    out = np.zeros(tab.shape[1])
    for s in range(N_MU - 1):
        t0 = s * h
        for x, w in zip(xg, wg):
            a = 0.5 * (x + 1.0)
            t = t0 + a * h
            e = (1.0 - a) * tab[s] + a * tab[s + 1]
            out += 0.5 * h * w * e * 4.0 * t**3
    return out


def _load_table():
    if _TABLE_PATH.exists():
        return np.load(_TABLE_PATH)
    tab = compute_albedo_table()
    try:
        _TABLE_PATH.parent.mkdir(exist_ok=True)
        np.save(_TABLE_PATH, tab)
    except OSError:
        pass
    return tab


E_TAB = np.ascontiguousarray(_load_table())
E_AVG = np.ascontiguousarray(_cosine_average(E_TAB))


@njit(inline="always")
def _rough_coord(rough):
    fr = (rough - R_MIN) / (1.0 - R_MIN) * (N_ROUGH - 1)
    if fr < 0.0:
        fr = 0.0
    j = int(fr)
    if j > N_ROUGH - 2:
        j = N_ROUGH - 2
    return j, fr - j


@njit(inline="always")
def _table_lookup(mu, j, ar):
    """(E, dE/drough) at cosine ``mu`` for roughness cell (j, ar)."""
    ft = math.sqrt(min(max(mu, 0.0), 1.0)) * (N_MU - 1)
    i = int(ft)
    if i > N_MU - 2:
        i = N_MU - 2
    at = ft - i
    e0 = E_TAB[i, j] * (1.0 - at) + E_TAB[i + 1, j] * at
    e1 = E_TAB[i, j + 1] * (1.0 - at) + E_TAB[i + 1, j + 1] * at
    dr = (1.0 - R_MIN) / (N_ROUGH - 1)
    return e0 * (1.0 - ar) + e1 * ar, (e1 - e0) / dr


@njit(inline="always")
def diffuse_weight(nl, nv, rough, spec):
    """Energy-compensation factor of the diffuse lobe and its roughness derivative."""
    if spec == 0.0:
        return 1.0, 0.0
    j, ar = _rough_coord(rough)
    eo, deo = _table_lookup(nv, j, ar)
    ei, dei = _table_lookup(nl, j, ar)
    dr = (1.0 - R_MIN) / (N_ROUGH - 1)
    ea = E_AVG[j] * (1.0 - ar) + E_AVG[j + 1] * ar
    dea = (E_AVG[j + 1] - E_AVG[j]) / dr
    A = 1.0 - spec * eo
    B = 1.0 - spec * ei
    C = 1.0 - spec * ea
    w = A * B / C
    dw = (-spec * deo * B - A * spec * dei) / C + w * spec * dea / C
    return w, dw


# ----------------------------------------------------------------------------
# evaluation


@njit(inline="always")
def ggx_d(nh, a2):
    d = nh * nh * (a2 - 1.0) + 1.0
    return a2 / (math.pi * d * d)


@njit
def brdf_core(rough, wi, wo, n, spec):
    """Shared pieces of the BRDF at one direction pair.

    Returns ``(nl, dwpi, ddwpi, dv, ddv, p5)``: the diffuse weight over pi and
    its roughness derivative, the product D*Vis (Vis = G / (4 nl nv)) and its
    roughness derivative, and the Schlick factor (1 - v.h)^5.  ``nl <= 0``
    signals an invalid pair.
    """
    nl = dot(n, wi)
    nv = dot(n, wo)
    if nl <= 0.0 or nv <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    r = rough if rough > R_MIN else R_MIN
    a = r * r
    a2 = a * a
    h = normalize(add(wi, wo))
    nh = dot(n, h)
    if nh < 0.0:
        nh = 0.0
    vh = dot(wo, h)
    if vh < 0.0:
        vh = 0.0
    dd = nh * nh * (a2 - 1.0) + 1.0
    D = a2 / (math.pi * dd * dd)
    dD_da = 2.0 * a / (math.pi * dd * dd * dd) * (dd - 2.0 * a2 * nh * nh)
    Av = math.sqrt(nv * nv * (1.0 - a2) + a2)
    Bl = math.sqrt(nl * nl * (1.0 - a2) + a2)
    S = nl * Av + nv * Bl
    vis = 0.5 / S
    dS_da = nl * a * (1.0 - nv * nv) / Av + nv * a * (1.0 - nl * nl) / Bl
    dvis_da = -0.5 / (S * S) * dS_da
    da_dr = 2.0 * r if rough > R_MIN else 0.0
    dv = D * vis
    ddv = (dD_da * vis + D * dvis_da) * da_dr
    w, dw = diffuse_weight(nl, nv, r, spec)
    if rough <= R_MIN:
        dw = 0.0
    p5 = (1.0 - vh) ** 5
    return nl, w * INV_PI, dw * INV_PI, dv, ddv, p5


@njit(inline="always")
def fresnel(albedo_c, metal, spec, p5):
    f0 = DIELECTRIC_F0 * spec * (1.0 - metal) + albedo_c * metal
    f90 = spec * (1.0 - metal) + metal
    return f0 * (1.0 - p5) + f90 * p5


@njit
def brdf_eval(mat, wi, wo, n, spec):
    """f_r as an RGB tuple; zero when either direction is below the surface."""
    nl, dwpi, _, dv, _, p5 = brdf_core(mat[3], wi, wo, n, spec)
    if nl <= 0.0:
        return (0.0, 0.0, 0.0)
    kd = 1.0 - mat[4]
    return (
        kd * mat[0] * dwpi + dv * fresnel(mat[0], mat[4], spec, p5),
        kd * mat[1] * dwpi + dv * fresnel(mat[1], mat[4], spec, p5),
        kd * mat[2] * dwpi + dv * fresnel(mat[2], mat[4], spec, p5),
    )


@njit
def brdf_split(mat, wi, wo, n, spec):
    """(cos, diffuse weight / pi, specular rgb) for demodulated buffers."""
    nl, dwpi, _, dv, _, p5 = brdf_core(mat[3], wi, wo, n, spec)
    if nl <= 0.0:
        return 0.0, 0.0, (0.0, 0.0, 0.0)
    return nl, dwpi, (
        dv * fresnel(mat[0], mat[4], spec, p5),
        dv * fresnel(mat[1], mat[4], spec, p5),
        dv * fresnel(mat[2], mat[4], spec, p5),
    )


# ----------------------------------------------------------------------------
# sampling


@njit
def pdf_ggx(rough, wi, wo, n):
    """Solid-angle pdf of :func:`sample_ggx` (NDF sampling of the half vector)."""
    if dot(n, wi) <= 0.0 or dot(n, wo) <= 0.0:
        return 0.0
    r = rough if rough > R_MIN else R_MIN
    a2 = r * r * r * r
    h = normalize(add(wi, wo))
    nh = dot(n, h)
    vh = dot(wo, h)
    if nh <= 0.0 or vh <= 0.0:
        return 0.0
    return ggx_d(nh, a2) * nh / (4.0 * vh)


@njit
def sample_ggx(rough, wo, n, u1, u2):
    """Half vector from D(h)(n.h), mirrored about it.  Returns (wi, pdf, ok)."""
    r = rough if rough > R_MIN else R_MIN
    a2 = r * r * r * r
    cos_h = math.sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
    sin_h = math.sqrt(max(0.0, 1.0 - cos_h * cos_h))
    phi = 2.0 * math.pi * u2
    t, bt = onb(n)
    h = to_world((sin_h * math.cos(phi), sin_h * math.sin(phi), cos_h), t, bt, n)
    vh = dot(wo, h)
    wi = normalize((2.0 * vh * h[0] - wo[0], 2.0 * vh * h[1] - wo[1], 2.0 * vh * h[2] - wo[2]))
    if vh <= 0.0 or dot(n, wi) <= 0.0:
        return wi, 0.0, False
    return wi, pdf_ggx(rough, wi, wo, n), True


@njit
def pdf_cosine(wi, n):
    c = dot(n, wi)
    return c * INV_PI if c > 0.0 else 0.0


@njit
def sample_cosine(n, u1, u2):
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    t, bt = onb(n)
    return normalize(to_world((r * math.cos(phi), r * math.sin(phi), math.sqrt(max(0.0, 1.0 - u1))), t, bt, n))


@njit
def pdf_brdf(rough, wi, wo, n):
    """Mixture pdf: LOBE_PROB cosine lobe + (1 - LOBE_PROB) GGX lobe."""
    if dot(n, wi) <= 0.0 or dot(n, wo) <= 0.0:
        return 0.0
    return LOBE_PROB * pdf_cosine(wi, n) + (1.0 - LOBE_PROB) * pdf_ggx(rough, wi, wo, n)


@njit
def sample_brdf(rough, wo, n, u1, u2):
    """Sample the lobe mixture, reusing ``u1`` for lobe selection."""
    if u1 < LOBE_PROB:
        wi = sample_cosine(n, u1 / LOBE_PROB, u2)
    else:
        wi, _, ok = sample_ggx(rough, wo, n, (u1 - LOBE_PROB) / (1.0 - LOBE_PROB), u2)
        if not ok:
            return wi, 0.0, False
    p = pdf_brdf(rough, wi, wo, n)
    return wi, p, p > 0.0


# ----------------------------------------------------------------------------
# numpy-facing API


def _as_mat(m):
    if isinstance(m, MaterialAttrib):
        return m.as_tuple()
    return tuple(float(x) for x in m)


def _t(v):
    v = np.asarray(v, dtype=np.float64)
    return (float(v[0]), float(v[1]), float(v[2]))


def eval_brdf(m, wi, wo, n, specular=1.0) -> np.ndarray:
    return np.array(brdf_eval(_as_mat(m), _t(wi), _t(wo), _t(n), float(specular)))


def sample_ggx_dir(m, wo, n, u):
    """Returns (wi, pdf, ok) for one GGX-lobe draw."""
    mat = _as_mat(m)
    wi, p, ok = sample_ggx(mat[3], _t(wo), _t(n), float(u[0]), float(u[1]))
    return np.array(wi), float(p), bool(ok)


def sample_brdf_dir(m, wo, n, u):
    mat = _as_mat(m)
    wi, p, ok = sample_brdf(mat[3], _t(wo), _t(n), float(u[0]), float(u[1]))
    return np.array(wi), float(p), bool(ok)


def pdf_brdf_dir(m, wi, wo, n) -> float:
    return float(pdf_brdf(_as_mat(m)[3], _t(wi), _t(wo), _t(n)))


def pdf_ggx_dir(m, wi, wo, n) -> float:
    return float(pdf_ggx(_as_mat(m)[3], _t(wi), _t(wo), _t(n)))


@njit
def _eval_many(mat, WI, wo, n, spec, out):
    for k in range(WI.shape[0]):
        f = brdf_eval(mat, (WI[k, 0], WI[k, 1], WI[k, 2]), wo, n, spec)
        out[k, 0] = f[0]
        out[k, 1] = f[1]
        out[k, 2] = f[2]


@njit
def _pdf_many(rough, WI, wo, n, which, out):
    for k in range(WI.shape[0]):
        wi = (WI[k, 0], WI[k, 1], WI[k, 2])
        if which == 0:
            out[k] = pdf_brdf(rough, wi, wo, n)
        elif which == 1:
            out[k] = pdf_ggx(rough, wi, wo, n)
        else:
            out[k] = pdf_cosine(wi, n)


@njit
def _sample_many(rough, wo, n, U, mixture, out_wi, out_pdf, out_ok):
    for k in range(U.shape[0]):
        if mixture:
            wi, p, ok = sample_brdf(rough, wo, n, U[k, 0], U[k, 1])
        else:
            wi, p, ok = sample_ggx(rough, wo, n, U[k, 0], U[k, 1])
        out_wi[k, 0] = wi[0]
        out_wi[k, 1] = wi[1]
        out_wi[k, 2] = wi[2]
        out_pdf[k] = p
        out_ok[k] = ok


def eval_brdf_many(m, WI, wo, n, specular=1.0) -> np.ndarray:
    WI = np.ascontiguousarray(WI, dtype=np.float64)
    out = np.empty((len(WI), 3))
    _eval_many(_as_mat(m), WI, _t(wo), _t(n), float(specular), out)
    return out


def pdf_many(m, WI, wo, n, lobe="mixture") -> np.ndarray:
    WI = np.ascontiguousarray(WI, dtype=np.float64)
    out = np.empty(len(WI))
    which = {"mixture": 0, "ggx": 1, "cosine": 2}[lobe]
    _pdf_many(_as_mat(m)[3], WI, _t(wo), _t(n), which, out)
    return out


def sample_many(m, wo, n, U, lobe="ggx"):
    U = np.ascontiguousarray(U, dtype=np.float64)
    wi = np.empty((len(U), 3))
    p = np.empty(len(U))
    ok = np.empty(len(U), dtype=np.bool_)
    _sample_many(_as_mat(m)[3], _t(wo), _t(n), U, lobe == "mixture", wi, p, ok)
    return wi, p, ok
