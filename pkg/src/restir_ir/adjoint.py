"""Replay and reverse-mode derivative of the primary-vertex shading.

The forward pass records, for every pass and pixel, the primary hit and the
samples it shaded with (see :class:`restir_ir.render.Records`).  Holding
those samples and their weights fixed, the pixel colour is a closed-form
function of the material at the hit and of the env texels under the direct
sample:

    c_d += K * cos * diffuse_weight / pi
    c_s += K * D * Vis * F * cos
    color += (1 - metallic) * albedo * c_d + c_s

with ``K = V * W * L_env(y)`` for the direct sample and the recorded incoming
radiance over pdf for the indirect samples.  :func:`replay` evaluates that
function and :func:`backprop_shading` its exact adjoint.  Indirect radiance
is a constant here, so nothing reached only through bounces gets a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit, pjit, prange
from .brdf import DIELECTRIC_F0, brdf_core
from .envmap import EnvMap, env_eval, footprint

N_TAPS = 4


@dataclass
class GradientSet:
    materials: np.ndarray  # (n_vertices, 5): albedo rgb, roughness, metallic
    env: np.ndarray  # (H, W, 3)
    skipped: int = 0

    @classmethod
    def zeros(cls, n_vertices, env_shape):
        return cls(np.zeros((n_vertices, 5)), np.zeros(tuple(env_shape[:2]) + (3,)))

    @property
    def albedo(self):
        return self.materials[:, :3]

    @property
    def roughness(self):
        return self.materials[:, 3]

    @property
    def metallic(self):
        return self.materials[:, 4]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.materials)) and np.all(np.isfinite(self.env)))

    def __iadd__(self, other):
        self.materials += other.materials
        self.env += other.env
        self.skipped += other.skipped
        return self


@njit(inline="always")
def _material(mats, F, f, b1, b2):
    a, b, c = F[f, 0], F[f, 1], F[f, 2]
    b0 = 1.0 - b1 - b2
    return (
        b0 * mats[a, 0] + b1 * mats[b, 0] + b2 * mats[c, 0],
        b0 * mats[a, 1] + b1 * mats[b, 1] + b2 * mats[c, 1],
        b0 * mats[a, 2] + b1 * mats[b, 2] + b2 * mats[c, 2],
        b0 * mats[a, 3] + b1 * mats[b, 3] + b2 * mats[c, 3],
        b0 * mats[a, 4] + b1 * mats[b, 4] + b2 * mats[c, 4],
    )


@njit(inline="always")
def _fresnel(a_c, m, s, p5):
    return (DIELECTRIC_F0 * s * (1.0 - m) + a_c * m) * (1.0 - p5) + (s * (1.0 - m) + m) * p5


@pjit
def replay_grid(F, mats, env, spec, face, bary, wo_a, ns_a, y_a, vw, wi_a, k_a, color, cd_out, cs_out):
    S = face.shape[0]
    for p in prange(face.shape[1]):
        for s in range(S):
            f = face[s, p]
            if f < 0:
                continue
            mat = _material(mats, F, f, bary[s, p, 0], bary[s, p, 1])
            wo = (wo_a[s, p, 0], wo_a[s, p, 1], wo_a[s, p, 2])
            ns = (ns_a[s, p, 0], ns_a[s, p, 1], ns_a[s, p, 2])
            cd0 = 0.0
            cd1 = 0.0
            cd2 = 0.0
            cs0 = 0.0
            cs1 = 0.0
            cs2 = 0.0
            if vw[s, p] > 0.0:
                y = (y_a[s, p, 0], y_a[s, p, 1], y_a[s, p, 2])
                nl, dwpi, _dd, dv, _ddv, p5 = brdf_core(mat[3], y, wo, ns, spec)
                if nl > 0.0:
                    L = env_eval(env, y)
                    k0 = L[0] * vw[s, p]
                    k1 = L[1] * vw[s, p]
                    k2 = L[2] * vw[s, p]
                    cd0 += k0 * (nl * dwpi)
                    cd1 += k1 * (nl * dwpi)
                    cd2 += k2 * (nl * dwpi)
                    cs0 += k0 * dv * _fresnel(mat[0], mat[4], spec, p5) * nl
                    cs1 += k1 * dv * _fresnel(mat[1], mat[4], spec, p5) * nl
                    cs2 += k2 * dv * _fresnel(mat[2], mat[4], spec, p5) * nl
            for k in range(k_a.shape[2]):
                k0 = k_a[s, p, k, 0]
                k1 = k_a[s, p, k, 1]
                k2 = k_a[s, p, k, 2]
                if k0 == 0.0 and k1 == 0.0 and k2 == 0.0:
                    continue
                wi = (wi_a[s, p, k, 0], wi_a[s, p, k, 1], wi_a[s, p, k, 2])
                nl, dwpi, _dd, dv, _ddv, p5 = brdf_core(mat[3], wi, wo, ns, spec)
                if nl > 0.0:
                    cd0 += k0 * (nl * dwpi)
                    cd1 += k1 * (nl * dwpi)
                    cd2 += k2 * (nl * dwpi)
                    cs0 += k0 * dv * _fresnel(mat[0], mat[4], spec, p5) * nl
                    cs1 += k1 * dv * _fresnel(mat[1], mat[4], spec, p5) * nl
                    cs2 += k2 * dv * _fresnel(mat[2], mat[4], spec, p5) * nl
            kd = 1.0 - mat[4]
            cd_out[p, 0] += cd0
            cd_out[p, 1] += cd1
            cd_out[p, 2] += cd2
            cs_out[p, 0] += cs0
            cs_out[p, 1] += cs1
            cs_out[p, 2] += cs2
            color[p, 0] += kd * mat[0] * cd0 + cs0
            color[p, 1] += kd * mat[1] * cd1 + cs1
            color[p, 2] += kd * mat[2] * cd2 + cs2


@njit(inline="always")
def _sample_grad(mat, K, nl, dwpi, ddwpi, dv, ddv, p5, spec, gc, gd, gs, out):
    """Accumulate d loss / d material of one shaded sample into ``out`` (5,)."""
    m = mat[4]
    for c in range(3):
        a = mat[c]
        cd = K[c] * nl * dwpi
        fr = _fresnel(a, m, spec, p5)
        Gd = gc[c] * (1.0 - m) * a + gd[c]
        Gs = gc[c] + gs[c]
        out[c] += gc[c] * (1.0 - m) * cd + Gs * K[c] * dv * nl * m * (1.0 - p5)
        out[3] += Gd * K[c] * nl * ddwpi + Gs * K[c] * nl * fr * ddv
        dfdm = (a - DIELECTRIC_F0 * spec) * (1.0 - p5) + (1.0 - spec) * p5
        out[4] += -gc[c] * a * cd + Gs * K[c] * dv * nl * dfdm


@pjit
def adjoint_grid(F, mats, env, spec, face, bary, wo_a, ns_a, y_a, vw, wi_a, k_a, g_color, g_cd, g_cs,
                 out_mat, out_tap_idx, out_tap_val, bad):
    """Per-record gradients; scattering to vertices / texels happens afterwards."""
    S = face.shape[0]
    h = env[0].shape[0]
    w = env[0].shape[1]
    for p in prange(face.shape[1]):
        gc = (g_color[p, 0], g_color[p, 1], g_color[p, 2])
        gd = (g_cd[p, 0], g_cd[p, 1], g_cd[p, 2])
        gs = (g_cs[p, 0], g_cs[p, 1], g_cs[p, 2])
        for s in range(S):
            for j in range(5):
                out_mat[s, p, j] = 0.0
            for j in range(N_TAPS):
                out_tap_idx[s, p, j] = -1
                for c in range(3):
                    out_tap_val[s, p, j, c] = 0.0
            f = face[s, p]
            if f < 0:
                continue
            if gc[0] == 0.0 and gc[1] == 0.0 and gc[2] == 0.0 and gd[0] == 0.0 and gd[1] == 0.0 \
                    and gd[2] == 0.0 and gs[0] == 0.0 and gs[1] == 0.0 and gs[2] == 0.0:
                continue
            mat = _material(mats, F, f, bary[s, p, 0], bary[s, p, 1])
            wo = (wo_a[s, p, 0], wo_a[s, p, 1], wo_a[s, p, 2])
            ns = (ns_a[s, p, 0], ns_a[s, p, 1], ns_a[s, p, 2])
            g = out_mat[s, p]
            if vw[s, p] > 0.0:
                y = (y_a[s, p, 0], y_a[s, p, 1], y_a[s, p, 2])
                nl, dwpi, ddwpi, dv, ddv, p5 = brdf_core(mat[3], y, wo, ns, spec)
                if nl > 0.0:
                    L = env_eval(env, y)
                    K = (L[0] * vw[s, p], L[1] * vw[s, p], L[2] * vw[s, p])
                    _sample_grad(mat, K, nl, dwpi, ddwpi, dv, ddv, p5, spec, gc, gd, gs, g)
                    # d color / d L_c, spread over the bilinear taps of L(y)
                    i0, i1, j0, j1, ay, ax = footprint(h, w, y)
                    m = mat[4]
                    tw = ((1.0 - ay) * (1.0 - ax), (1.0 - ay) * ax, ay * (1.0 - ax), ay * ax)
                    ti = (i0 * w + j0, i0 * w + j1, i1 * w + j0, i1 * w + j1)
                    for c in range(3):
                        Gd = gc[c] * (1.0 - m) * mat[c] + gd[c]
                        Gs = gc[c] + gs[c]
                        dl = vw[s, p] * nl * (Gd * dwpi + Gs * dv * _fresnel(mat[c], m, spec, p5))
                        for j in range(N_TAPS):
                            out_tap_val[s, p, j, c] = dl * tw[j]
                    for j in range(N_TAPS):
                        out_tap_idx[s, p, j] = ti[j]
            for k in range(k_a.shape[2]):
                K = (k_a[s, p, k, 0], k_a[s, p, k, 1], k_a[s, p, k, 2])
                if K[0] == 0.0 and K[1] == 0.0 and K[2] == 0.0:
                    continue
                wi = (wi_a[s, p, k, 0], wi_a[s, p, k, 1], wi_a[s, p, k, 2])
                nl, dwpi, ddwpi, dv, ddv, p5 = brdf_core(mat[3], wi, wo, ns, spec)
                if nl > 0.0:
                    _sample_grad(mat, K, nl, dwpi, ddwpi, dv, ddv, p5, spec, gc, gd, gs, g)
            ok = True
            for j in range(5):
                if not np.isfinite(g[j]):
                    ok = False
            for j in range(N_TAPS):
                for c in range(3):
                    if not np.isfinite(out_tap_val[s, p, j, c]):
                        ok = False
            if not ok:
                bad[s, p] = True
                for j in range(5):
                    g[j] = 0.0
                for j in range(N_TAPS):
                    out_tap_idx[s, p, j] = -1


def _flat(img, n):
    if img is None:
        return np.zeros((n, 3))
    return np.ascontiguousarray(np.asarray(img, dtype=np.float64).reshape(n, 3))


def _rec_args(rec):
    return (rec.face, rec.bary, rec.wo, rec.ns, rec.y, rec.vw, rec.wi, rec.k_ind)


def replay(mesh, env: EnvMap, records, specular=1.0):
    """Recompute (color, c_d, c_s) from recorded samples with the current parameters.

    Background radiance is not included.
    """
    n = records.face.shape[1]
    color = np.zeros((n, 3))
    cd = np.zeros((n, 3))
    cs = np.zeros((n, 3))
    replay_grid(mesh.faces, mesh.vertex_materials, env.kernel_tuple(), float(specular), *_rec_args(records),
                color, cd, cs)
    shape = (records.height, records.width, 3)
    return color.reshape(shape), cd.reshape(shape), cs.reshape(shape)


def backprop_shading(mesh, env: EnvMap, records, g_color, g_cd=None, g_cs=None, specular=1.0) -> GradientSet:
    """Adjoint of :func:`replay`: d loss / d (vertex materials, env texels).

    Scatter to vertices and texels is a sequential ``np.add.at`` in record
    order, so the result does not depend on the number of worker threads.
    """
    S, n = records.face.shape
    gm = np.empty((S, n, 5))
    tap_idx = np.empty((S, n, N_TAPS), dtype=np.int64)
    tap_val = np.empty((S, n, N_TAPS, 3))
    bad = np.zeros((S, n), dtype=np.bool_)
    adjoint_grid(
        mesh.faces, mesh.vertex_materials, env.kernel_tuple(), float(specular), *_rec_args(records),
        _flat(g_color, n), _flat(g_cd, n), _flat(g_cs, n), gm, tap_idx, tap_val, bad,
    )
    out = GradientSet.zeros(mesh.num_vertices, env.radiance.shape)
    hit = records.face >= 0
    faces = mesh.faces[records.face[hit]]  # (k, 3)
    b = records.bary[hit]
    bw = np.stack([1.0 - b[:, 0] - b[:, 1], b[:, 0], b[:, 1]], axis=1)
    g = gm[hit]
    for corner in range(3):
        np.add.at(out.materials, faces[:, corner], g * bw[:, corner : corner + 1])
    ti = tap_idx.reshape(-1)
    tv = tap_val.reshape(-1, 3)
    keep = ti >= 0
    flat_env = out.env.reshape(-1, 3)
    np.add.at(flat_env, ti[keep], tv[keep])
    out.skipped = int(bad.sum())
    return out
