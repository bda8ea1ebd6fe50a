"""Inverse rendering of materials and environment lighting with reservoir-based direct light."""

from .bvh import LBVH, Hit, Ray, build_lbvh, intersect, occluded
from .brdf import MaterialAttrib, eval_brdf, pdf_brdf_dir, sample_brdf_dir
from .config import DenoiseConfig, OptimConfig, RenderConfig, SceneConfig, load_config
from .denoise import AtrousParams, atrous_filter
from .envmap import EnvMap, load_envmap, sample_env
from .mesh import Mesh, load_mesh
from .optim import align_albedo_scale, loss_pbr, optimize
from .render import Camera, FrameBuffers, Scene, render_frame, render_reference

__version__ = "0.1.0"

__all__ = [
    "LBVH",
    "Hit",
    "Ray",
    "build_lbvh",
    "intersect",
    "occluded",
    "MaterialAttrib",
    "eval_brdf",
    "pdf_brdf_dir",
    "sample_brdf_dir",
    "DenoiseConfig",
    "OptimConfig",
    "RenderConfig",
    "SceneConfig",
    "load_config",
    "AtrousParams",
    "atrous_filter",
    "EnvMap",
    "load_envmap",
    "sample_env",
    "Mesh",
    "load_mesh",
    "align_albedo_scale",
    "loss_pbr",
    "optimize",
    "Camera",
    "FrameBuffers",
    "Scene",
    "render_frame",
    "render_reference",
]
