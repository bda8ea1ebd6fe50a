"""Losses, Adam, and the joint material / lighting recovery loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .adjoint import GradientSet, backprop_shading
from .config import DenoiseConfig, OptimConfig, RenderConfig
from .denoise import AtrousParams, atrous_backward, atrous_filter
from .mesh import R_MIN, Mesh
from .render import Scene, render_frame
from .rng import hash32

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# comparison space


def srgb_encode(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_encode_grad(x):
    """Derivative of ``srgb_encode``; zero where the clamp is active."""
    xc = np.clip(x, 1e-12, 1.0)
    g = np.where(xc <= 0.0031308, 12.92, 1.055 / 2.4 * np.power(xc, 1.0 / 2.4 - 1.0))
    return np.where((x < 0.0) | (x > 1.0), 0.0, g)


def srgb_decode(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape[:2], dtype=bool)
    m = np.asarray(mask) > 0.5
    if not m.any():
        raise ValueError("empty mask")
    return m


# ----------------------------------------------------------------------------
# losses


def loss_pbr(render, ref, mask=None, return_grad=False):
    """Mean squared error over masked pixels (inputs already in comparison space)."""
    render = np.asarray(render, dtype=np.float64)
    m = _mask(mask, render.shape)
    d = (render - ref) * m[..., None]
    n = m.sum() * render.shape[-1]
    loss = float((d * d).sum() / n)
    if return_grad:
        return loss, 2.0 * d / n
    return loss


def loss_monochrome(c_d, c_s, ref, mask=None):
    """Mean |mean_rgb(c_d + c_s) - max_rgb(ref)| and its (sub)gradients w.r.t. c_d and c_s."""
    c_d = np.asarray(c_d, dtype=np.float64)
    m = _mask(mask, c_d.shape)
    y = (c_d + c_s).mean(axis=-1)
    v = np.asarray(ref).max(axis=-1)
    diff = (y - v) * m
    n = m.sum()
    loss = float(np.abs(diff).sum() / n)
    g = np.repeat((np.sign(diff) / (3.0 * n))[..., None], c_d.shape[-1], axis=-1)
    return loss, g, g.copy()


def _in_face_offset(b, eps_bary, rng):
    """Move barycentrics by ``eps_bary`` in a random direction, staying inside the face."""
    ang = rng.uniform(0.0, 2.0 * np.pi, len(b))
    d1 = eps_bary * np.cos(ang)
    d2 = eps_bary * np.sin(ang)
    b2 = b.copy()
    b2[:, 1] += d1
    b2[:, 2] += d2
    b2[:, 0] = 1.0 - b2[:, 1] - b2[:, 2]
    # reflect back inside when the jitter leaves the triangle
    flip = (b2 < 0.0).any(axis=1)
    b2[flip, 1] = b[flip, 1] - d1[flip]
    b2[flip, 2] = b[flip, 2] - d2[flip]
    b2[flip, 0] = 1.0 - b2[flip, 1] - b2[flip, 2]
    b2 = np.clip(b2, 0.0, None)
    return b2 / b2.sum(axis=1, keepdims=True)


def sample_surface(mesh: Mesh, n, rng):
    """Area-uniform surface samples: (face ids, barycentrics (n, 3))."""
    area = mesh.face_areas()
    face = rng.choice(len(area), size=n, p=area / area.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    b = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return face, b


def loss_smooth_material(mesh: Mesh, materials=None, epsilon=None, n_samples=4096, rng=None,
                         weights=(1.0, 1.0)):
    """Smoothness of albedo and roughness between nearby surface points.

    Each sample compares the interpolated attribute at a random point with
    the one ``epsilon`` away inside the same face.  Returns
    ``(weighted total, gradient (n_vertices, 5), {"albedo": .., "roughness": ..})``
    where the parts are the unweighted mean absolute differences.
    """
    mats = mesh.vertex_materials if materials is None else materials
    rng = np.random.default_rng(0) if rng is None else rng
    if epsilon is None:
        epsilon = 0.005 * mean_edge_length(mesh)
    grad = np.zeros_like(mats)
    parts = {"albedo": 0.0, "roughness": 0.0}
    if epsilon <= 0 or n_samples <= 0:
        return 0.0, grad, parts
    face, b = sample_surface(mesh, n_samples, rng)
    tri = mesh.vertices[mesh.faces[face]]
    edge = (np.linalg.norm(tri[:, 1] - tri[:, 0], axis=1) + np.linalg.norm(tri[:, 2] - tri[:, 1], axis=1)
            + np.linalg.norm(tri[:, 0] - tri[:, 2], axis=1)) / 3.0
    b2 = _in_face_offset(b, epsilon / edge, rng)
    db = b - b2  # (n, 3)
    vid = mesh.faces[face]  # (n, 3)
    diff = np.einsum("nk,nkc->nc", db, mats[vid])  # (n, 5)
    total = 0.0
    for name, cols, lam in (("albedo", [0, 1, 2], weights[0]), ("roughness", [3], weights[1])):
        d = diff[:, cols]
        parts[name] = float(np.abs(d).mean())
        total += lam * parts[name]
        g = lam * np.sign(d) / d.size  # d loss / d diff
        for k in range(3):
            contrib = g * db[:, k : k + 1]
            for j, c in enumerate(cols):
                np.add.at(grad[:, c], vid[:, k], contrib[:, j])
    return float(total), grad, parts


def mean_edge_length(mesh: Mesh) -> float:
    tri = mesh.vertices[mesh.faces]
    e = np.concatenate([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]])
    return float(np.linalg.norm(e, axis=1).mean())


# ----------------------------------------------------------------------------
# Adam


@dataclass
class Adam:
    """Bias-corrected Adam on a single array."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(param, dtype=np.float64)
            self.v = np.zeros_like(param, dtype=np.float64)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mh = self.m / (1.0 - self.beta1**self.t)
        vh = self.v / (1.0 - self.beta2**self.t)
        param -= self.lr * mh / (np.sqrt(vh) + self.eps)
        return param


@dataclass
class TrainableParams:
    """Views onto the scene's vertex materials and env radiance."""

    scene: Scene
    albedo: bool = True
    roughness: bool = True
    metallic: bool = False
    env: bool = True

    @property
    def materials(self):
        return self.scene.mesh.vertex_materials

    @property
    def env_radiance(self):
        return self.scene.env.radiance

    def material_mask(self):
        return np.array([self.albedo] * 3 + [self.roughness, self.metallic], dtype=float)

    def project(self):
        m = self.materials
        np.clip(m[:, :3], 0.0, 1.0, out=m[:, :3])
        np.clip(m[:, 3], R_MIN, 1.0, out=m[:, 3])
        if self.scene.metallic_enabled:
            np.clip(m[:, 4], 0.0, 1.0, out=m[:, 4])
        else:
            m[:, 4] = 0.0
        self.scene.env.clamp_()


@dataclass
class AdamState:
    materials: Adam
    env: Adam

    @classmethod
    def from_config(cls, cfg: OptimConfig):
        return cls(
            Adam(cfg.lr_material, cfg.beta1, cfg.beta2, cfg.eps),
            Adam(cfg.lr_env, cfg.beta1, cfg.beta2, cfg.eps),
        )


def adam_step(params: TrainableParams, grads: GradientSet, state: AdamState) -> bool:
    """One projected Adam update; returns False (and changes nothing) on non-finite gradients."""
    from .envmap import build_sampling_table

    if not grads.is_finite():
        log.error("non-finite gradient, step rejected")
        return False
    mask = params.material_mask()
    if mask.any():
        state.materials.step(params.materials, grads.materials * mask)
    if params.env:
        state.env.step(params.env_radiance, grads.env)
    params.project()
    if params.env:
        build_sampling_table(params.scene.env)
    return True


# ----------------------------------------------------------------------------
# metrics used during training


def align_albedo_scale(pred, gt, mask=None):
    """Per-channel least-squares scale s minimising |s * pred - gt|^2 over the mask."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if mask is None:
        sel = np.ones(pred.shape[:-1], dtype=bool)
    else:
        sel = np.asarray(mask) > 0.5
    p = pred[sel]
    g = gt[sel]
    num = (p * g).sum(axis=0)
    den = (p * p).sum(axis=0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)


def psnr(a, b, mask=None):
    a = np.asarray(a, dtype=np.float64)
    m = _mask(mask, a.shape)
    mse = float((((a - b) ** 2) * m[..., None]).sum() / (m.sum() * a.shape[-1]))
    return 99.0 if mse <= 0 else min(99.0, 10.0 * math.log10(1.0 / mse))


# ----------------------------------------------------------------------------
# training loop


@dataclass
class StepLog:
    step: int
    loss: float
    loss_pbr: float
    loss_light: float
    loss_smooth: float
    psnr: float
    view: int


def _step_seed(seed, step):
    return int(hash32(hash32(seed) ^ (step + 1)))


def training_step(scene: Scene, view, render_cfg: RenderConfig, optim_cfg: OptimConfig,
                  denoise_cfg: Optional[DenoiseConfig], seed: int, rng):
    """Forward + backward for one view.  Returns (GradientSet, loss parts, rendered color)."""
    fb = render_frame(scene, view.camera, render_cfg, record=True, seed=seed)
    color, cd, cs = fb.color, fb.diffuse_demod, fb.specular_demod
    state = None
    if denoise_cfg is not None and denoise_cfg.enabled:
        ap = AtrousParams.for_scene(scene.mesh.diagonal, denoise_cfg.sigma_rt, denoise_cfg.sigma_n,
                                    denoise_cfg.sigma_x, denoise_cfg.iterations)
        color, state, (cd, cs) = atrous_filter(fb, ap, extra=(cd, cs))
    mask = view.mask
    ref_t = srgb_encode(view.image)
    l_pbr, g_t = loss_pbr(srgb_encode(color), ref_t, mask, return_grad=True)
    g_color = g_t * srgb_encode_grad(color)
    lam = optim_cfg.lambda_light
    if lam > 0:
        l_light, g_cd, g_cs = loss_monochrome(cd, cs, view.image, mask)
        g_cd *= lam
        g_cs *= lam
    else:
        l_light, g_cd, g_cs = 0.0, None, None
    if state is not None:
        g_color = atrous_backward(state, g_color)
        if g_cd is not None:
            g_cd = atrous_backward(state, g_cd)
            g_cs = atrous_backward(state, g_cs)
    grads = backprop_shading(scene.mesh, scene.env, fb.records, g_color, g_cd, g_cs, scene.specular)
    l_smooth = 0.0
    if optim_cfg.lambda_albedo > 0 or optim_cfg.lambda_roughness > 0:
        eps = optim_cfg.smooth_eps_frac * mean_edge_length(scene.mesh)
        l_smooth, g_smooth, _ = loss_smooth_material(
            scene.mesh, epsilon=eps, n_samples=optim_cfg.smooth_samples, rng=rng,
            weights=(optim_cfg.lambda_albedo, optim_cfg.lambda_roughness),
        )
        grads.materials += g_smooth
    parts = (l_pbr + lam * l_light + l_smooth, l_pbr, l_light, l_smooth)
    return grads, parts, color


def optimize(scene: Scene, views, render_cfg: RenderConfig = None, optim_cfg: OptimConfig = None,
             denoise_cfg: DenoiseConfig = None, seed: int = 0, log_path=None,
             callback: Optional[Callable] = None, optimize_metallic: bool = False):
    """Jointly fit vertex materials and the env map to ``views``.

    ``views`` is a sequence with ``camera``, ``image`` (linear RGB) and
    ``mask`` attributes.  Returns (TrainableParams, list of StepLog).
    """
    render_cfg = render_cfg or RenderConfig()
    optim_cfg = optim_cfg or OptimConfig()
    if not views:
        raise ValueError("need at least one view")
    params = TrainableParams(scene, optim_cfg.optimize_albedo, optim_cfg.optimize_roughness,
                             optimize_metallic and scene.metallic_enabled, optim_cfg.optimize_env)
    params.project()
    state = AdamState.from_config(optim_cfg)
    rng = np.random.default_rng(seed)
    history = []
    initial = None
    over = 0
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "loss_pbr", "loss_light", "loss_smooth", "psnr", "view"])
    try:
        for step in range(optim_cfg.steps):
            vi = int(rng.integers(len(views)))
            view = views[vi]
            grads, parts, color = training_step(scene, view, render_cfg, optim_cfg, denoise_cfg,
                                                _step_seed(seed, step), rng)
            loss = parts[0]
            if initial is None:
                initial = max(loss, 1e-12)
            over = over + 1 if loss > optim_cfg.divergence_factor * initial else 0
            if over >= optim_cfg.divergence_patience:
                raise DivergenceError(
                    f"loss {loss:.4g} above {optim_cfg.divergence_factor:g}x the initial {initial:.4g} "
                    f"for {over} steps (step {step})"
                )
            if grads.skipped:
                log.warning("step %d: %d non-finite samples skipped", step, grads.skipped)
            frac = optim_cfg.lr_decay ** (step / max(optim_cfg.steps - 1, 1))
            state.materials.lr = optim_cfg.lr_material * frac
            state.env.lr = optim_cfg.lr_env * frac
            adam_step(params, grads, state)
            entry = StepLog(step, loss, parts[1], parts[2], parts[3],
                            psnr(srgb_encode(color), srgb_encode(view.image), view.mask), vi)
            history.append(entry)
            if writer is not None:
                writer.writerow([entry.step, f"{entry.loss:.8g}", f"{entry.loss_pbr:.8g}",
                                 f"{entry.loss_light:.8g}", f"{entry.loss_smooth:.8g}",
                                 f"{entry.psnr:.4f}", entry.view])
            if optim_cfg.log_every and step % optim_cfg.log_every == 0:
                log.info("step %d loss %.5g psnr %.2f", step, loss, entry.psnr)
            if callback is not None and optim_cfg.snapshot_every and (step + 1) % optim_cfg.snapshot_every == 0:
                callback(step + 1, params)
    finally:
        if fh is not None:
            fh.close()
    return params, history
