"""Forward renderer: reservoir-resampled direct light plus multi-bounce indirect light.

Per pass (one sample per pixel) the pipeline is

    primary rays -> candidates -> temporal merge -> spatial merge -> shading

and the passes are averaged.  Shaded surface vertices per path are capped
by ``bounces`` (primary included).  The env light is the only emitter: each
vertex picks it up through its direct-light estimate, so an indirect ray that
escapes the mesh contributes nothing.

At the primary vertex the lighting is kept demodulated:

    color = (1 - metallic) * albedo * c_d + c_s

which is also what the adjoint in :mod:`restir_ir.adjoint` differentiates.
With ``record=True`` the per-sample quantities needed for that are kept in
:class:`Records`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as _rng
from ._jit import njit, pjit, prange
from .brdf import brdf_eval, brdf_split, pdf_brdf, sample_brdf
from .bvh import LBVH, Ray, any_hit, build_lbvh, closest_hit, geometry_tuple
from .config import RenderConfig
from .envmap import EnvMap, env_eval, env_pdf, env_sample
from .mesh import Mesh
from .reservoir import (
    RAY_EPS,
    RES_SIZE,
    candidates_grid,
    offset_origin,
    res_finalize,
    spatial_grid,
    stream_candidates,
    temporal_grid,
)
from .vecmath import add, dot, lum, madd, mul, normalize, scale

STREAM_CAMERA = 0
STREAM_SHADE = 4
STREAM_REFERENCE = 5


@dataclass
class Camera:
    camera_to_world: np.ndarray
    fov_x: float
    resolution: tuple  # (width, height)

    def __post_init__(self):
        m = np.asarray(self.camera_to_world, dtype=np.float64)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise ValueError("camera_to_world must be a finite 4x4 matrix")
        R = m[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-5:
            raise ValueError("camera rotation is not orthonormal")
        if not 0 < self.fov_x < math.pi:
            raise ValueError("fov_x must be in (0, pi)")
        self.camera_to_world = np.ascontiguousarray(m)
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))

    @property
    def width(self):
        return self.resolution[0]

    @property
    def height(self):
        return self.resolution[1]

    @property
    def position(self):
        return self.camera_to_world[:3, 3].copy()

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), fov_x=math.radians(40.0), resolution=(64, 64)):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        m = np.eye(4)
        m[:3, 0] = right
        m[:3, 1] = true_up
        m[:3, 2] = -fwd
        m[:3, 3] = eye
        return cls(m, fov_x, resolution)


@njit(inline="always")
def camera_ray(c2w, tan_x, w, h, x, y, jx, jy):
    """OpenGL-style pinhole: -Z forward, +Y up, pixel (0, 0) top-left."""
    sx = (2.0 * (x + 0.5 + jx) / w - 1.0) * tan_x
    sy = (1.0 - 2.0 * (y + 0.5 + jy) / h) * tan_x * h / w
    d = normalize(
        (
            c2w[0, 0] * sx + c2w[0, 1] * sy - c2w[0, 2],
            c2w[1, 0] * sx + c2w[1, 1] * sy - c2w[1, 2],
            c2w[2, 0] * sx + c2w[2, 1] * sy - c2w[2, 2],
        )
    )
    return (c2w[0, 3], c2w[1, 3], c2w[2, 3]), d


def generate_ray(cam: Camera, pixel, jitter=(0.0, 0.0)) -> Ray:
    """Ray through pixel ``(x, y)`` offset by ``jitter`` in [-0.5, 0.5] pixels."""
    x, y = pixel
    if not (0 <= x < cam.width and 0 <= y < cam.height):
        raise IndexError(f"pixel {pixel} outside {cam.resolution}")
    o, d = camera_ray(
        cam.camera_to_world, math.tan(0.5 * cam.fov_x), cam.width, cam.height, float(x), float(y),
        float(jitter[0]), float(jitter[1]),
    )
    return Ray(np.array(o), np.array(d))


@dataclass
class Scene:
    mesh: Mesh
    env: EnvMap
    specular: float = 1.0
    metallic_enabled: bool = False
    bvh: Optional[LBVH] = None

    def __post_init__(self):
        if self.bvh is None:
            self.bvh = build_lbvh(self.mesh)
        if not self.metallic_enabled:
            self.mesh.vertex_materials[:, 4] = 0.0
        self.geo = geometry_tuple(self.mesh, self.bvh)

    @property
    def materials(self) -> np.ndarray:
        return self.mesh.vertex_materials

    @property
    def ray_eps(self) -> float:
        return RAY_EPS * self.mesh.diagonal

    def clamp_threshold(self, clamp: float) -> float:
        if clamp <= 0:
            return 0.0
        lum_ = self.env.radiance.mean(axis=2)
        return float(clamp * max(np.percentile(lum_, 99), 1e-8))


@dataclass
class Records:
    """Per-pass, per-pixel samples of the primary vertex (see module docstring)."""

    face: np.ndarray  # (S, P) int, -1 when the pass missed the mesh
    bary: np.ndarray  # (S, P, 2) weights of vertices 1 and 2
    wo: np.ndarray  # (S, P, 3)
    ns: np.ndarray  # (S, P, 3)
    y: np.ndarray  # (S, P, 3) chosen direct-light direction
    vw: np.ndarray  # (S, P) visibility * W * pass weight, 0 when no sample
    wi: np.ndarray  # (S, P, N, 3) indirect directions
    k_ind: np.ndarray  # (S, P, N, 3) incident indirect radiance / pdf * sample weight
    width: int
    height: int

    @classmethod
    def allocate(cls, spp, n_pix, n_ind, width, height):
        return cls(
            np.full((spp, n_pix), -1, dtype=np.int64),
            np.zeros((spp, n_pix, 2)),
            np.zeros((spp, n_pix, 3)),
            np.zeros((spp, n_pix, 3)),
            np.zeros((spp, n_pix, 3)),
            np.zeros((spp, n_pix)),
            np.zeros((spp, n_pix, max(n_ind, 1), 3)),
            np.zeros((spp, n_pix, max(n_ind, 1), 3)),
            width,
            height,
        )


@dataclass
class FrameBuffers:
    color: np.ndarray
    normal_aov: np.ndarray
    position_aov: np.ndarray
    alpha: np.ndarray
    diffuse_demod: np.ndarray
    specular_demod: np.ndarray
    albedo_aov: np.ndarray
    roughness_aov: np.ndarray
    depth: np.ndarray
    background: np.ndarray = None
    records: Optional[Records] = field(default=None, repr=False)

    @property
    def resolution(self):
        return self.color.shape[1], self.color.shape[0]


# ----------------------------------------------------------------------------
# kernels


@njit(inline="always")
def surface_at(geo, mats, f, u, v, d):
    """(position, shading normal, geometric normal, outgoing, material) at a hit."""
    V, F, VN, FN = geo[0], geo[1], geo[2], geo[3]
    a, b, c = F[f, 0], F[f, 1], F[f, 2]
    w0 = 1.0 - u - v
    pos = (
        w0 * V[a, 0] + u * V[b, 0] + v * V[c, 0],
        w0 * V[a, 1] + u * V[b, 1] + v * V[c, 1],
        w0 * V[a, 2] + u * V[b, 2] + v * V[c, 2],
    )
    ng = (FN[f, 0], FN[f, 1], FN[f, 2])
    if dot(ng, d) > 0.0:
        ng = (-ng[0], -ng[1], -ng[2])
    ns = normalize(
        (
            w0 * VN[a, 0] + u * VN[b, 0] + v * VN[c, 0],
            w0 * VN[a, 1] + u * VN[b, 1] + v * VN[c, 1],
            w0 * VN[a, 2] + u * VN[b, 2] + v * VN[c, 2],
        )
    )
    if dot(ns, ng) < 0.0:
        ns = (-ns[0], -ns[1], -ns[2])
    mat = (
        w0 * mats[a, 0] + u * mats[b, 0] + v * mats[c, 0],
        w0 * mats[a, 1] + u * mats[b, 1] + v * mats[c, 1],
        w0 * mats[a, 2] + u * mats[b, 2] + v * mats[c, 2],
        w0 * mats[a, 3] + u * mats[b, 3] + v * mats[c, 3],
        w0 * mats[a, 4] + u * mats[b, 4] + v * mats[c, 4],
    )
    return pos, ns, ng, (-d[0], -d[1], -d[2]), mat


@njit
def path_radiance(geo, env, mats, spec, o, d, max_vertices, st, eps):
    """Radiance arriving at ``o`` along ``d`` from surfaces only.

    Each surface vertex gathers env light with two-sample MIS (light and BRDF
    sample, balance heuristic) and continues along the BRDF sample if that
    hits the mesh.  Returns (radiance, hit_anything).
    """
    f, t, u, v = closest_hit(geo, o, d, 0.0, np.inf)
    if f < 0:
        return (0.0, 0.0, 0.0), False
    L = (0.0, 0.0, 0.0)
    beta = (1.0, 1.0, 1.0)
    depth = 1
    while True:
        pos, ns, ng, wo, mat = surface_at(geo, mats, f, u, v, d)
        rough = mat[3]
        # light sample
        dl, pl, Le = env_sample(env, _rng.next_float(st), _rng.next_float(st))
        c = dot(ns, dl)
        if pl > 0.0 and c > 0.0 and dot(ng, dl) > 0.0:
            fr = brdf_eval(mat, dl, wo, ns, spec)
            if lum(fr) > 0.0 and not any_hit(geo, offset_origin(pos, ng, dl, eps), dl, 0.0, np.inf):
                wgt = c / (pl + pdf_brdf(rough, dl, wo, ns))
                L = add(L, scale(mul(beta, mul(fr, Le)), wgt))
        # BRDF sample: env hit (MIS-weighted) or continuation
        wb, pb, ok = sample_brdf(rough, wo, ns, _rng.next_float(st), _rng.next_float(st))
        if not ok or dot(ng, wb) <= 0.0:
            break
        fr = brdf_eval(mat, wb, wo, ns, spec)
        c = dot(ns, wb)
        f, t, u, v = closest_hit(geo, offset_origin(pos, ng, wb, eps), wb, 0.0, np.inf)
        if f < 0:
            wgt = c / (pb + env_pdf(env, wb))
            L = add(L, scale(mul(beta, mul(fr, env_eval(env, wb))), wgt))
            break
        if depth >= max_vertices:
            break
        beta = scale(mul(beta, fr), c / pb)
        depth += 1
        d = wb
    return L, True


@pjit
def primary_grid(geo, env, mats, c2w, tan_x, width, height, seed, pass_idx, jitter, bg_env,
                 gpos, gns, gng, gwo, gmat, gdepth, gvalid, gface, gbary, bg):
    for p in prange(width * height):
        x = p % width
        y = p // width
        jx = 0.0
        jy = 0.0
        if jitter:
            st = _rng.new_state(seed, p, pass_idx, STREAM_CAMERA)
            jx = _rng.next_float(st) - 0.5
            jy = _rng.next_float(st) - 0.5
        o, d = camera_ray(c2w, tan_x, width, height, x, y, jx, jy)
        f, t, u, v = closest_hit(geo, o, d, 0.0, np.inf)
        gface[p] = f
        if f < 0:
            gvalid[p] = False
            gdepth[p] = 0.0
            L = env_eval(env, d) if bg_env else (0.0, 0.0, 0.0)
            for c in range(3):
                bg[p, c] = L[c]
                gpos[p, c] = 0.0
                gns[p, c] = 0.0
                gng[p, c] = 0.0
                gwo[p, c] = 0.0
            for c in range(5):
                gmat[p, c] = 0.0
            gbary[p, 0] = 0.0
            gbary[p, 1] = 0.0
            continue
        pos, ns, ng, wo, mat = surface_at(geo, mats, f, u, v, d)
        gvalid[p] = True
        gdepth[p] = t
        gbary[p, 0] = u
        gbary[p, 1] = v
        for c in range(3):
            bg[p, c] = 0.0
            gpos[p, c] = pos[c]
            gns[p, c] = ns[c]
            gng[p, c] = ng[c]
            gwo[p, c] = wo[c]
        for c in range(5):
            gmat[p, c] = mat[c]


@pjit
def shade_grid(geo, env, mats, gb, res, spec, seed, pass_idx, bounces, n_ind, light_frac, clamp_t, eps,
               weight, acc_color, acc_cd, acc_cs, record, s, r_y, r_vw, r_wi, r_k):
    valid = gb[6]
    for p in prange(res.shape[0]):
        if not valid[p]:
            continue
        gpos, gns, gng, gwo, gmat = gb[0], gb[1], gb[2], gb[3], gb[4]
        pos = (gpos[p, 0], gpos[p, 1], gpos[p, 2])
        ns = (gns[p, 0], gns[p, 1], gns[p, 2])
        ng = (gng[p, 0], gng[p, 1], gng[p, 2])
        wo = (gwo[p, 0], gwo[p, 1], gwo[p, 2])
        mat = (gmat[p, 0], gmat[p, 1], gmat[p, 2], gmat[p, 3], gmat[p, 4])
        st = _rng.new_state(seed, p, pass_idx, STREAM_SHADE)
        cd = (0.0, 0.0, 0.0)
        cs = (0.0, 0.0, 0.0)
        # direct: the reservoir's sample with one shadow ray
        r = res[p]
        vw = 0.0
        y = (r[0], r[1], r[2])
        if r[7] > 0.0 and r[5] > 0.0:
            if not any_hit(geo, offset_origin(pos, ng, y, eps), y, 0.0, np.inf):
                vw = r[5] * weight
        if vw > 0.0:
            c, dwpi, sp = brdf_split(mat, y, wo, ns, spec)
            K = scale(env_eval(env, y), vw)
            cd = madd(cd, K, c * dwpi)
            cs = add(cs, scale(mul(K, sp), c))
        if record:
            r_vw[s, p] = vw
            for c in range(3):
                r_y[s, p, c] = y[c]
        # indirect: one-sample mixture of env and BRDF sampling
        if bounces > 1:
            for k in range(n_ind):
                u0 = _rng.next_float(st)
                u1 = _rng.next_float(st)
                u2 = _rng.next_float(st)
                if u0 < light_frac:
                    wi, _pl, _L = env_sample(env, u1, u2)
                    ok = True
                else:
                    wi, _pb, ok = sample_brdf(mat[3], wo, ns, u1, u2)
                Kv = (0.0, 0.0, 0.0)
                c = dot(ns, wi)
                if ok and c > 0.0 and dot(ng, wi) > 0.0:
                    pdf = light_frac * env_pdf(env, wi) + (1.0 - light_frac) * pdf_brdf(mat[3], wi, wo, ns)
                    if pdf > 0.0:
                        Lind, _hit = path_radiance(geo, env, mats, spec, offset_origin(pos, ng, wi, eps), wi,
                                                   bounces - 1, st, eps)
                        Kv = scale(Lind, 1.0 / pdf)
                        if clamp_t > 0.0:
                            val = lum(mul(brdf_eval(mat, wi, wo, ns, spec), Kv)) * c
                            if val > clamp_t:
                                Kv = scale(Kv, clamp_t / val)
                        Kv = scale(Kv, weight / n_ind)
                        cc, dwpi, sp = brdf_split(mat, wi, wo, ns, spec)
                        cd = madd(cd, Kv, cc * dwpi)
                        cs = add(cs, scale(mul(Kv, sp), cc))
                if record:
                    for j in range(3):
                        r_wi[s, p, k, j] = wi[j]
                        r_k[s, p, k, j] = Kv[j]
        kd = 1.0 - mat[4]
        for j in range(3):
            acc_cd[p, j] += cd[j]
            acc_cs[p, j] += cs[j]
            acc_color[p, j] += kd * mat[j] * cd[j] + cs[j]


@pjit
def reference_grid(geo, env, mats, spec, c2w, tan_x, width, height, seed, spp, bounces, bg_env, eps, out):
    for p in prange(width * height):
        x = p % width
        y = p // width
        acc = (0.0, 0.0, 0.0)
        for s in range(spp):
            st = _rng.new_state(seed, p, s, STREAM_REFERENCE)
            jx = _rng.next_float(st) - 0.5
            jy = _rng.next_float(st) - 0.5
            o, d = camera_ray(c2w, tan_x, width, height, x, y, jx, jy)
            L, hit = path_radiance(geo, env, mats, spec, o, d, bounces, st, eps)
            if not hit and bg_env:
                L = env_eval(env, d)
            acc = add(acc, L)
        for c in range(3):
            out[p, c] = acc[c] / spp


# ----------------------------------------------------------------------------
# drivers


class _GBuffer:
    def __init__(self, n):
        self.pos = np.zeros((n, 3))
        self.ns = np.zeros((n, 3))
        self.ng = np.zeros((n, 3))
        self.wo = np.zeros((n, 3))
        self.mat = np.zeros((n, 5))
        self.depth = np.zeros(n)
        self.valid = np.zeros(n, dtype=np.bool_)
        self.face = np.full(n, -1, dtype=np.int64)
        self.bary = np.zeros((n, 2))
        self.bg = np.zeros((n, 3))

    def kernel_tuple(self):
        return (self.pos, self.ns, self.ng, self.wo, self.mat, self.depth, self.valid)


def _trace_primary(scene, cam, gb, seed, pass_idx, jitter, bg_env):
    primary_grid(
        scene.geo, scene.env.kernel_tuple(), scene.materials, cam.camera_to_world, math.tan(0.5 * cam.fov_x),
        cam.width, cam.height, seed, pass_idx, jitter, bg_env,
        gb.pos, gb.ns, gb.ng, gb.wo, gb.mat, gb.depth, gb.valid, gb.face, gb.bary, gb.bg,
    )


def gbuffer(scene: Scene, cam: Camera, background="env"):
    """Pixel-centre primary hits (used for the AOVs)."""
    gb = _GBuffer(cam.width * cam.height)
    _trace_primary(scene, cam, gb, 0, 0, False, background == "env")
    return gb


def render_frame(scene: Scene, cam: Camera, cfg: RenderConfig = None, record=False, seed=None) -> FrameBuffers:
    cfg = cfg or RenderConfig()
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    w, h = cam.width, cam.height
    n = w * h
    env_t = scene.env.kernel_tuple()
    spec = float(scene.specular)
    eps = scene.ray_eps
    bg_env = cfg.background == "env"
    clamp_t = scene.clamp_threshold(cfg.clamp)
    m = cfg.ris_candidates if cfg.reuse_enabled else 1
    cos_thr = math.cos(math.radians(cfg.spatial_normal_deg))

    aov = gbuffer(scene, cam, cfg.background)
    color = np.zeros((n, 3))
    cd = np.zeros((n, 3))
    cs = np.zeros((n, 3))
    bg = np.zeros((n, 3))
    rec = Records.allocate(cfg.spp, n, cfg.indirect_samples, w, h) if record else None
    dummy3 = np.zeros((1, 1, 3))
    dummy4 = np.zeros((1, 1, 1, 3))

    gb = _GBuffer(n)
    gb_prev = _GBuffer(n)
    res = np.zeros((n, RES_SIZE))
    tmp = np.zeros((n, RES_SIZE))
    prev = np.zeros((n, RES_SIZE))
    weight = 1.0 / cfg.spp
    for s in range(cfg.spp):
        _trace_primary(scene, cam, gb, seed, s, True, bg_env)
        gbt = gb.kernel_tuple()
        candidates_grid(env_t, scene.geo, gbt, spec, m, seed, s, cfg.ris_visibility, eps, res)
        if cfg.reuse_enabled:
            if cfg.temporal_enabled and s > 0:
                temporal_grid(env_t, scene.geo, gbt, gb_prev.kernel_tuple(), res, prev, cfg.temporal_cap, spec,
                              seed, s, cfg.ris_visibility, eps, tmp)
                res, tmp = tmp, res
            if cfg.temporal_enabled:
                # history keeps only this pixel's own chain so that spatial
                # neighbours never share candidates (shared ones bias RIS)
                prev[:] = res
            for it in range(cfg.spatial_passes):
                spatial_grid(env_t, scene.geo, gbt, res, w, h, cfg.spatial_neighbors, cfg.spatial_radius_px,
                             cos_thr, cfg.spatial_depth_frac, spec, seed, s * 16 + it, cfg.ris_visibility, eps, tmp)
                res, tmp = tmp, res
        shade_grid(
            scene.geo, env_t, scene.materials, gbt, res, spec, seed, s, cfg.bounces, cfg.indirect_samples,
            cfg.indirect_light_fraction, clamp_t, eps, weight, color, cd, cs, record, s,
            rec.y if record else dummy3, rec.vw if record else dummy3[0], rec.wi if record else dummy4,
            rec.k_ind if record else dummy4,
        )
        bg += gb.bg * weight
        if record:
            rec.face[s] = gb.face
            rec.bary[s] = gb.bary
            rec.wo[s] = gb.wo
            rec.ns[s] = gb.ns
        if cfg.reuse_enabled and cfg.temporal_enabled:
            gb, gb_prev = gb_prev, gb
    color += bg
    return _buffers(aov, color, cd, cs, bg, w, h, rec)


def _buffers(aov, color, cd, cs, bg, w, h, rec=None):
    img = lambda a, c=3: a.reshape(h, w, c) if c > 1 else a.reshape(h, w)  # noqa: E731
    return FrameBuffers(
        color=img(color),
        normal_aov=img(aov.ns.copy()),
        position_aov=img(aov.pos.copy()),
        alpha=img(aov.valid.astype(np.float64), 1),
        diffuse_demod=img(cd),
        specular_demod=img(cs),
        albedo_aov=img(aov.mat[:, :3].copy()),
        roughness_aov=img(aov.mat[:, 3].copy(), 1),
        depth=img(aov.depth.copy(), 1),
        background=img(bg),
        records=rec,
    )


def render_reference(scene: Scene, cam: Camera, spp: int = 4096, seed: int = 0, bounces: int = 3,
                     background="env") -> FrameBuffers:
    """Plain path tracing with light/BRDF MIS at every vertex; no reservoirs.

    The demodulated buffers are left at zero.
    """
    w, h = cam.width, cam.height
    out = np.zeros((w * h, 3))
    reference_grid(
        scene.geo, scene.env.kernel_tuple(), scene.materials, float(scene.specular), cam.camera_to_world,
        math.tan(0.5 * cam.fov_x), w, h, seed, int(spp), int(bounces), background == "env", scene.ray_eps, out,
    )
    aov = gbuffer(scene, cam, background)
    z = np.zeros((w * h, 3))
    return _buffers(aov, out, z, z.copy(), z.copy(), w, h)


# ----------------------------------------------------------------------------
# single-point helpers


def _sp_parts(sp):
    return (
        tuple(float(x) for x in sp.position),
        tuple(float(x) for x in sp.shading_normal),
        tuple(float(x) for x in sp.geometric_normal),
        tuple(float(x) for x in sp.outgoing),
        tuple(float(x) for x in sp.material),
    )


@njit
def _direct_point(geo, env, spec, pos, ns, ng, wo, mat, m, spp, seed, pixel, eps):
    acc = (0.0, 0.0, 0.0)
    r = np.zeros(RES_SIZE)
    for s in range(spp):
        for i in range(RES_SIZE):
            r[i] = 0.0
        st = _rng.new_state(seed, pixel, s, 1)
        stream_candidates(r, env, geo, mat, pos, ns, ng, wo, spec, m, st, False, eps)
        res_finalize(r, r[4])
        if r[7] > 0.0 and r[5] > 0.0:
            y = (r[0], r[1], r[2])
            if not any_hit(geo, offset_origin(pos, ng, y, eps), y, 0.0, np.inf):
                f = brdf_eval(mat, y, wo, ns, spec)
                acc = add(acc, scale(mul(f, env_eval(env, y)), dot(ns, y) * r[5]))
    return scale(acc, 1.0 / spp)


def shade_direct(sp, scene: Scene, spp: int = 32, m: int = 32, seed: int = 0, pixel: int = 0) -> np.ndarray:
    """Average of ``spp`` independent reservoir estimates of direct light at ``sp`` (no reuse)."""
    pos, ns, ng, wo, mat = _sp_parts(sp)
    return np.array(_direct_point(scene.geo, scene.env.kernel_tuple(), float(scene.specular), pos, ns, ng, wo, mat,
                                  int(m), int(spp), seed, pixel, scene.ray_eps))


@njit
def _indirect_point(geo, env, mats, spec, pos, ns, ng, wo, mat, depth, max_vertices, light_frac, n, seed, eps):
    acc = (0.0, 0.0, 0.0)
    for s in range(n):
        st = _rng.new_state(seed, 0, s, STREAM_SHADE)
        u0 = _rng.next_float(st)
        u1 = _rng.next_float(st)
        u2 = _rng.next_float(st)
        if u0 < light_frac:
            wi, _pl, _L = env_sample(env, u1, u2)
            ok = True
        else:
            wi, _pb, ok = sample_brdf(mat[3], wo, ns, u1, u2)
        c = dot(ns, wi)
        if not ok or c <= 0.0 or dot(ng, wi) <= 0.0:
            continue
        pdf = light_frac * env_pdf(env, wi) + (1.0 - light_frac) * pdf_brdf(mat[3], wi, wo, ns)
        if pdf <= 0.0:
            continue
        L, _hit = path_radiance(geo, env, mats, spec, offset_origin(pos, ng, wi, eps), wi, max_vertices - depth, st, eps)
        acc = add(acc, scale(mul(brdf_eval(mat, wi, wo, ns, spec), L), c / pdf))
    return scale(acc, 1.0 / n)


def shade_indirect(sp, scene: Scene, depth: int = 0, bounces: int = 3, samples: int = 1, seed: int = 0,
                   light_fraction: float = 0.5) -> np.ndarray:
    """Indirect radiance leaving ``sp``, which is surface vertex ``depth`` (0 = primary).

    Zero at the last vertex of the bounce budget.
    """
    if depth >= bounces - 1:
        return np.zeros(3)
    pos, ns, ng, wo, mat = _sp_parts(sp)
    return np.array(_indirect_point(scene.geo, scene.env.kernel_tuple(), scene.materials, float(scene.specular),
                                    pos, ns, ng, wo, mat, int(depth), int(bounces) - 1, float(light_fraction),
                                    int(samples), seed, scene.ray_eps))
