"""Reservoir-based resampled importance sampling of the environment light.

A reservoir is stored as a row of ``RES_SIZE`` floats so whole pixel grids
are plain ``(n_pixels, RES_SIZE)`` arrays:

    0-2  chosen direction y
    3    weight sum
    4    candidate count M
    5    unbiased contribution weight W
    6    target value of y at the owning pixel
    7    1.0 when a sample is held

The target excludes visibility unless ``use_vis`` is set.  Reuse merges
reservoirs by re-targeting each one at the receiving shading point
(``p_hat(y) * W * M``) and normalises with the total count of the
contributors whose target is nonzero at the selected sample, which keeps
the estimator unbiased when neighbours see different geometry.

Shading-point buffers (``gb``) are tuples
``(position, shading normal, geometric normal, outgoing, material, depth, valid)``
indexed by flat pixel id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as _rng
from ._jit import njit, pjit, prange
from .brdf import brdf_eval
from .bvh import any_hit, null_geometry
from .envmap import EnvMap, env_eval, env_sample
from .vecmath import dot, lum, madd, mul

RES_SIZE = 8
STREAM_CANDIDATES = 1
STREAM_SPATIAL = 2
STREAM_TEMPORAL = 3

RAY_EPS = 1e-5  # times the scene diagonal


# ----------------------------------------------------------------------------
# kernels


@njit(inline="always")
def offset_origin(pos, ng, d, eps):
    s = eps if dot(d, ng) >= 0.0 else -eps
    return madd(pos, ng, s)


@njit
def target_at(env, geo, mat, pos, ns, ng, wo, spec, y, use_vis, eps):
    """Unnormalised target: luminance of L(y) f_r(y) max(0, y.n)."""
    c = dot(ns, y)
    if c <= 0.0 or dot(ng, y) <= 0.0:
        return 0.0
    L = env_eval(env, y)
    val = lum(mul(L, brdf_eval(mat, y, wo, ns, spec))) * c
    if use_vis and val > 0.0:
        if any_hit(geo, offset_origin(pos, ng, y, eps), y, 0.0, np.inf):
            return 0.0
    return val


@njit(inline="always")
def gb_target(env, geo, gb, q, spec, y, use_vis, eps):
    pos, ns, ng, wo, mat = gb[0], gb[1], gb[2], gb[3], gb[4]
    return target_at(
        env,
        geo,
        (mat[q, 0], mat[q, 1], mat[q, 2], mat[q, 3], mat[q, 4]),
        (pos[q, 0], pos[q, 1], pos[q, 2]),
        (ns[q, 0], ns[q, 1], ns[q, 2]),
        (ng[q, 0], ng[q, 1], ng[q, 2]),
        (wo[q, 0], wo[q, 1], wo[q, 2]),
        spec,
        y,
        use_vis,
        eps,
    )


@njit(inline="always")
def res_clear(r):
    for i in range(RES_SIZE):
        r[i] = 0.0


@njit(inline="always")
def res_stream(r, y, phat, w, m, u):
    """Stream a (possibly pre-merged) sample of weight ``w`` and count ``m``."""
    r[3] += w
    r[4] += m
    if w > 0.0 and u * r[3] < w:
        r[0] = y[0]
        r[1] = y[1]
        r[2] = y[2]
        r[6] = phat
        r[7] = 1.0


@njit(inline="always")
def res_finalize(r, z):
    """W = weight_sum / (z * p_hat(y)); ``z`` is M for a plain reservoir."""
    if r[7] > 0.0 and r[6] > 0.0 and z > 0.0:
        r[5] = r[3] / (z * r[6])
    else:
        r[5] = 0.0


@njit(inline="always")
def res_dir(r):
    return (r[0], r[1], r[2])


@njit
def stream_candidates(r, env, geo, mat, pos, ns, ng, wo, spec, m, st, use_vis, eps):
    """Feed ``m`` env-sampled candidates into ``r`` (3 uniforms each)."""
    for _ in range(m):
        u1 = _rng.next_float(st)
        u2 = _rng.next_float(st)
        u3 = _rng.next_float(st)
        d, pdf, _L = env_sample(env, u1, u2)
        ph = target_at(env, geo, mat, pos, ns, ng, wo, spec, d, use_vis, eps) if pdf > 0.0 else 0.0
        w = ph / pdf if pdf > 0.0 else 0.0
        res_stream(r, d, ph, w, 1.0, u3)


@pjit
def candidates_grid(env, geo, gb, spec, m, seed, pass_idx, use_vis, eps, out):
    valid = gb[6]
    for p in prange(out.shape[0]):
        r = out[p]
        res_clear(r)
        if not valid[p]:
            continue
        st = _rng.new_state(seed, p, pass_idx, STREAM_CANDIDATES)
        pos, ns, ng, wo, mat = gb[0], gb[1], gb[2], gb[3], gb[4]
        stream_candidates(
            r,
            env,
            geo,
            (mat[p, 0], mat[p, 1], mat[p, 2], mat[p, 3], mat[p, 4]),
            (pos[p, 0], pos[p, 1], pos[p, 2]),
            (ns[p, 0], ns[p, 1], ns[p, 2]),
            (ng[p, 0], ng[p, 1], ng[p, 2]),
            (wo[p, 0], wo[p, 1], wo[p, 2]),
            spec,
            m,
            st,
            use_vis,
            eps,
        )
        res_finalize(r, r[4])


@pjit
def temporal_grid(env, geo, gb, gb_prev, cur, prev, cap, spec, seed, pass_idx, use_vis, eps, out):
    valid = gb[6]
    valid_prev = gb_prev[6]
    for p in prange(out.shape[0]):
        r = out[p]
        for i in range(RES_SIZE):
            r[i] = cur[p, i]
        if not valid[p] or not valid_prev[p] or prev[p, 4] <= 0.0:
            continue
        st = _rng.new_state(seed, p, pass_idx, STREAM_TEMPORAL)
        res_clear(r)
        a = cur[p]
        b = prev[p]
        m_a = a[4]
        m_b = min(b[4], cap * m_a)
        if a[7] > 0.0:
            res_stream(r, res_dir(a), a[6], a[6] * a[5] * m_a, m_a, _rng.next_float(st))
        else:
            r[4] += m_a
            _rng.next_float(st)
        yb = res_dir(b)
        ph = gb_target(env, geo, gb, p, spec, yb, use_vis, eps) if b[7] > 0.0 else 0.0
        res_stream(r, yb, ph, ph * b[5] * m_b, m_b, _rng.next_float(st))
        if r[7] > 0.0:
            y = res_dir(r)
            z = m_a
            if gb_target(env, geo, gb_prev, p, spec, y, use_vis, eps) > 0.0:
                z += m_b
            res_finalize(r, z)


@njit(inline="always")
def _similar(gb, p, q, cos_thr, depth_frac):
    ns, depth, valid = gb[1], gb[5], gb[6]
    if not valid[q]:
        return False
    c = ns[p, 0] * ns[q, 0] + ns[p, 1] * ns[q, 1] + ns[p, 2] * ns[q, 2]
    if c < cos_thr:
        return False
    return abs(depth[q] - depth[p]) <= depth_frac * depth[p]


@pjit
def spatial_grid(env, geo, gb, inp, width, height, k, radius, cos_thr, depth_frac, spec, seed, stream, use_vis, eps, out):
    valid = gb[6]
    for p in prange(out.shape[0]):
        r = out[p]
        for i in range(RES_SIZE):
            r[i] = inp[p, i]
        if not valid[p] or k <= 0:
            continue
        st = _rng.new_state(seed, p, stream, STREAM_SPATIAL)
        px = p % width
        py = p // width
        res_clear(r)
        a = inp[p]
        if a[7] > 0.0:
            res_stream(r, res_dir(a), a[6], a[6] * a[5] * a[4], a[4], _rng.next_float(st))
        else:
            r[4] += a[4]
            _rng.next_float(st)
        accepted = np.empty(k, dtype=np.int64)
        n_acc = 0
        for _ in range(k):
            dx = int(math.floor((2.0 * _rng.next_float(st) - 1.0) * (radius + 0.5) + 0.5))
            dy = int(math.floor((2.0 * _rng.next_float(st) - 1.0) * (radius + 0.5) + 0.5))
            u = _rng.next_float(st)
            qx = min(max(px + dx, 0), width - 1)
            qy = min(max(py + dy, 0), height - 1)
            q = qy * width + qx
            if q == p or not _similar(gb, p, q, cos_thr, depth_frac):
                continue
            dup = False
            for i in range(n_acc):
                if accepted[i] == q:
                    dup = True
            if dup:
                continue
            accepted[n_acc] = q
            n_acc += 1
            b = inp[q]
            yb = res_dir(b)
            ph = gb_target(env, geo, gb, p, spec, yb, use_vis, eps) if b[7] > 0.0 else 0.0
            res_stream(r, yb, ph, ph * b[5] * b[4], b[4], u)
        if r[7] > 0.0:
            y = res_dir(r)
            z = a[4]
            for i in range(n_acc):
                q = accepted[i]
                if gb_target(env, geo, gb, q, spec, y, use_vis, eps) > 0.0:
                    z += inp[q, 4]
            res_finalize(r, z)


# ----------------------------------------------------------------------------
# object API


@dataclass
class Candidate:
    dir: np.ndarray
    radiance: np.ndarray
    proposal_pdf: float
    target_value: float

    @property
    def weight(self) -> float:
        return self.target_value / self.proposal_pdf


@dataclass
class Reservoir:
    chosen: Optional[Candidate] = None
    weight_sum: float = 0.0
    count: float = 0
    unbiased_weight: float = 0.0

    def finalize(self, z=None):
        """Fill W from the weight sum; ``z`` defaults to the candidate count."""
        z = self.count if z is None else z
        if self.chosen is not None and self.chosen.target_value > 0 and z > 0:
            self.unbiased_weight = self.weight_sum / (z * self.chosen.target_value)
        else:
            self.unbiased_weight = 0.0
        return self


def _uniform(source) -> float:
    if isinstance(source, np.random.Generator):
        return float(source.random())
    if isinstance(source, np.ndarray):
        return float(_rng.next_float(source))
    return float(source())


def reservoir_update(r: Reservoir, c: Candidate, u: float) -> Reservoir:
    w = c.weight
    r.weight_sum += w
    r.count += 1
    if w > 0 and u * r.weight_sum < w:
        r.chosen = c
    return r


def merge_reservoirs(a: Reservoir, b: Reservoir, u: float) -> Reservoir:
    """Merge ``b`` into a copy of ``a``.

    ``b.weight_sum`` must already be expressed in ``a``'s target (see
    :func:`retarget`).
    """
    out = Reservoir(a.chosen, a.weight_sum, a.count, a.unbiased_weight)
    out.weight_sum += b.weight_sum
    out.count += b.count
    if b.weight_sum > 0 and u * out.weight_sum < b.weight_sum:
        out.chosen = b.chosen
    return out


def retarget(b: Reservoir, target_at_receiver: float, count: Optional[float] = None) -> Reservoir:
    """Express a finalized reservoir in another pixel's target."""
    m = b.count if count is None else count
    if b.chosen is None:
        return Reservoir(None, 0.0, m, 0.0)
    c = Candidate(b.chosen.dir, b.chosen.radiance, b.chosen.proposal_pdf, target_at_receiver)
    return Reservoir(c, target_at_receiver * b.unbiased_weight * m, m, 0.0)


def _sp_tuple(sp):
    return (
        tuple(float(x) for x in sp.material),
        tuple(float(x) for x in sp.position),
        tuple(float(x) for x in sp.shading_normal),
        tuple(float(x) for x in sp.geometric_normal),
        tuple(float(x) for x in sp.outgoing),
    )


def target_value(sp, env: EnvMap, y, specular=1.0) -> float:
    mat, pos, ns, ng, wo = _sp_tuple(sp)
    return float(target_at(env.kernel_tuple(), null_geometry(), mat, pos, ns, ng, wo, float(specular), tuple(map(float, y)), False, 0.0))


def generate_candidates(sp, env: EnvMap, m: int, rng, specular=1.0) -> Reservoir:
    """Stream ``m`` candidates from the env sampler into a fresh reservoir.

    ``rng`` is a numpy Generator, a counter-based state from
    :func:`restir_ir.rng.new_state`, or a zero-argument callable.  Each
    candidate consumes three uniforms: two for the direction, one for the
    reservoir decision.
    """
    env_t = env.kernel_tuple()
    r = Reservoir()
    for _ in range(m):
        u1, u2, u3 = _uniform(rng), _uniform(rng), _uniform(rng)
        d, pdf, L = env_sample(env_t, u1, u2)
        d = np.array(d)
        ph = target_value(sp, env, d, specular)
        reservoir_update(r, Candidate(d, np.array(L), pdf, ph), u3)
    return r.finalize()


def finalize_shade(r: Reservoir, sp, env: EnvMap, bvh, mesh, specular=1.0) -> np.ndarray:
    """f(y) W with one shadow ray toward the chosen sample."""
    from .bvh import Ray, occluded

    if r.chosen is None or r.unbiased_weight == 0.0:
        return np.zeros(3)
    y = np.asarray(r.chosen.dir, dtype=np.float64)
    ng = np.asarray(sp.geometric_normal)
    ns = np.asarray(sp.shading_normal)
    if y @ ns <= 0 or y @ ng <= 0:
        return np.zeros(3)
    eps = RAY_EPS * mesh.diagonal
    origin = np.asarray(sp.position) + ng * eps
    if occluded(bvh, mesh, Ray(origin, y, 0.0, np.inf)):
        return np.zeros(3)
    mat, _, ns_t, _, wo = _sp_tuple(sp)
    f = np.array(brdf_eval(mat, tuple(y), wo, ns_t, float(specular)))
    L = np.array(env_eval(env.kernel_tuple(), tuple(y)))
    return f * L * (y @ ns) * r.unbiased_weight


def temporal_reuse(current: Reservoir, previous: Optional[Reservoir], cap: float, u: float,
                   target_current=None, target_previous=None) -> Reservoir:
    """Merge the same pixel's previous reservoir with its count clamped to ``cap * current.count``.

    ``target_current(y)`` / ``target_previous(y)`` evaluate the target at the
    current and previous shading points; by default the two coincide and the
    stored target values are reused.
    """
    if previous is None or previous.count <= 0:
        return current
    m_b = min(previous.count, cap * current.count)
    if target_current is None:
        ph = previous.chosen.target_value if previous.chosen is not None else 0.0
    else:
        ph = target_current(previous.chosen.dir) if previous.chosen is not None else 0.0
    a = retarget(current, current.chosen.target_value if current.chosen is not None else 0.0)
    out = merge_reservoirs(a, retarget(previous, ph, m_b), u)
    z = current.count
    if out.chosen is not None:
        tp = target_previous(out.chosen.dir) if target_previous is not None else out.chosen.target_value
        if tp > 0:
            z += m_b
    return out.finalize(z)


def spatial_reuse(grid: np.ndarray, gbuffer, env: EnvMap, width: int, height: int, k=4, radius=8,
                  normal_deg=25.0, depth_frac=0.05, seed=0, pass_idx=0, specular=1.0, geo=None,
                  use_vis=False, eps=0.0) -> np.ndarray:
    """One spatial pass over a reservoir grid; returns a new grid.

    ``gbuffer`` is the shading-point tuple described in the module docstring.
    """
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    out = np.empty_like(grid)
    if geo is None:
        geo = null_geometry()
    spatial_grid(
        env.kernel_tuple(), geo, gbuffer, grid, width, height, int(k), int(radius),
        math.cos(math.radians(normal_deg)), float(depth_frac), float(specular), seed, pass_idx,
        use_vis, eps, out,
    )
    return out
