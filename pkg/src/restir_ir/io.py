"""Datasets, image files, checkpoints and scene assembly."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from .config import SceneConfig
from .envmap import EnvMap, build_sampling_table, load_envmap, save_envmap
from .mesh import Mesh, load_mesh
from .optim import srgb_decode, srgb_encode
from .render import Camera, Scene

log = logging.getLogger(__name__)

# rotation taking a Y-up world onto the renderer's Z-up world
Y_UP_TO_Z_UP = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])

ORTHO_TOL = 1e-3
MATERIALS_MAGIC = b"RIRMAT01"


class DatasetError(ValueError):
    pass


# ----------------------------------------------------------------------------
# images


def write_png(path, linear, alpha=None):
    """Write linear RGB as 8-bit sRGB, with an optional alpha channel."""
    img = np.round(srgb_encode(np.asarray(linear, dtype=np.float64)) * 255.0).astype(np.uint8)
    if alpha is not None:
        a = np.round(np.clip(alpha, 0.0, 1.0) * 255.0).astype(np.uint8)
        img = np.concatenate([img, a[..., None]], axis=-1)
    Image.fromarray(img).save(path)


def read_png(path):
    """Returns (linear RGB float64 (H, W, 3), alpha (H, W) or None)."""
    with Image.open(path) as im:
        im.load()
        has_alpha = "A" in im.getbands()
        arr = np.asarray(im.convert("RGBA" if has_alpha else "RGB"), dtype=np.float64) / 255.0
    rgb = srgb_decode(arr[..., :3])
    return rgb, (arr[..., 3] if has_alpha else None)


def write_float_image(path, img):
    """Little-endian float32 raw file plus ``<path>.json`` with width, height and channels."""
    a = np.asarray(img, dtype="<f4")
    if a.ndim == 2:
        a = a[..., None]
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(a).tobytes())
    meta = {"width": a.shape[1], "height": a.shape[0], "channels": a.shape[2], "dtype": "float32le"}
    Path(str(path) + ".json").write_text(json.dumps(meta))


def read_float_image(path):
    path = Path(path)
    try:
        meta = json.loads(Path(str(path) + ".json").read_text())
        raw = path.read_bytes()
    except (OSError, json.JSONDecodeError) as e:
        raise OSError(f"cannot read float image {path}: {e}") from e
    shape = (meta["height"], meta["width"], meta["channels"])
    if len(raw) != 4 * shape[0] * shape[1] * shape[2]:
        raise ValueError(f"{path}: size does not match sidecar {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


# ----------------------------------------------------------------------------
# dataset


@dataclass
class View:
    camera: Camera
    image_path: str
    image: np.ndarray  # linear RGB
    mask: np.ndarray  # 1 = foreground
    index: int = 0
    has_alpha: bool = False


@dataclass
class Dataset:
    views: List[View]
    split: str
    root: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.views)

    @property
    def resolution(self):
        return self.views[0].camera.resolution if self.views else (0, 0)


def check_transform(m, where="transform_matrix"):
    """Validate a 4x4 camera-to-world matrix; returns it as float64."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise DatasetError(f"{where}: expected 4x4, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DatasetError(f"{where}: non-finite entries")
    R = m[:3, :3]
    if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
        raise DatasetError(f"{where}: rotation is not orthonormal (tol {ORTHO_TOL})")
    if np.linalg.det(R) < 0:
        raise DatasetError(f"{where}: rotation has negative determinant")
    if np.abs(m[3] - [0.0, 0.0, 0.0, 1.0]).max() > ORTHO_TOL:
        raise DatasetError(f"{where}: last row must be (0, 0, 0, 1)")
    # re-orthonormalise so small export noise does not trip the camera check
    u, _, vt = np.linalg.svd(R)
    out = m.copy()
    out[:3, :3] = u @ vt
    out[3] = [0.0, 0.0, 0.0, 1.0]
    return out


def _image_file(root: Path, rel: str) -> Path:
    p = root / rel
    if p.suffix == "":
        p = p.with_suffix(".png")
    return p


def load_dataset(root, split="train", y_up=False, images=True) -> Dataset:
    """Read ``transforms_<split>.json`` (camera_angle_x + per-frame transform_matrix).

    Matrices are OpenGL camera-to-world (-Z forward, +Y up), which is the
    renderer's camera convention, so they are used as-is.  ``y_up`` rotates
    the world from Y-up to Z-up.  Images are decoded from sRGB to linear;
    PNG alpha becomes the mask.  ``images=False`` reads cameras only; the
    resolution then comes from the optional ``w``/``h`` keys (default 64).
    """
    root = Path(root)
    tf = root / f"transforms_{split}.json"
    try:
        meta = json.loads(tf.read_text())
    except OSError as e:
        raise DatasetError(f"missing {tf}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"{tf}: malformed JSON ({e})") from e
    if "camera_angle_x" not in meta or "frames" not in meta:
        raise DatasetError(f"{tf}: needs camera_angle_x and frames")
    fov = float(meta["camera_angle_x"])
    if not 0.0 < fov < math.pi:
        raise DatasetError(f"{tf}: camera_angle_x out of range")
    views = []
    size = None
    for i, fr in enumerate(meta["frames"]):
        if "file_path" not in fr or "transform_matrix" not in fr:
            raise DatasetError(f"{tf}: frame {i} needs file_path and transform_matrix")
        m = check_transform(fr["transform_matrix"], f"{tf}: frame {i}")
        if y_up:
            m[:3] = Y_UP_TO_Z_UP @ m[:3]
        path = _image_file(root, fr["file_path"])
        if not images:
            w, h = int(meta.get("w", 64)), int(meta.get("h", 64))
            views.append(View(Camera(m, fov, (w, h)), str(path), None, None, i, False))
            continue
        if not path.exists():
            raise DatasetError(f"{tf}: frame {i} image {path} not found")
        rgb, alpha = read_png(path)
        h, w = rgb.shape[:2]
        if size is None:
            size = (w, h)
        elif size != (w, h):
            raise DatasetError(f"{path}: resolution {w}x{h} differs from {size[0]}x{size[1]}")
        mask = np.ones((h, w)) if alpha is None else alpha
        views.append(View(Camera(m, fov, (w, h)), str(path), rgb, mask, i, alpha is not None))
    if not views:
        raise DatasetError(f"{tf}: no frames")
    return Dataset(views, split, str(root), {"camera_angle_x": fov})


def write_transforms(root, split, cameras, file_paths):
    """Inverse of :func:`load_dataset` for the cameras (images written separately)."""
    c0 = cameras[0]
    frames = [
        {"file_path": fp, "transform_matrix": c.camera_to_world.tolist()}
        for c, fp in zip(cameras, file_paths)
    ]
    meta = {"camera_angle_x": c0.fov_x, "w": c0.width, "h": c0.height, "frames": frames}
    Path(root, f"transforms_{split}.json").write_text(json.dumps(meta, indent=1))


# ----------------------------------------------------------------------------
# checkpoints


def save_materials(path, materials: np.ndarray, extra: Optional[dict] = None):
    """Magic, uint32 header length, JSON header, then float32 (n, 5) little-endian."""
    mats = np.ascontiguousarray(materials, dtype="<f4")
    header = {"count": int(mats.shape[0]), "columns": ["r", "g", "b", "roughness", "metallic"]}
    header.update(extra or {})
    hb = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MATERIALS_MAGIC)
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        f.write(mats.tobytes())


def load_materials(path):
    """Returns (materials (n, 5) float64, header dict)."""
    data = Path(path).read_bytes()
    if data[:8] != MATERIALS_MAGIC:
        raise ValueError(f"{path}: not a materials file")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + n])
    body = np.frombuffer(data[12 + n :], dtype="<f4")
    if body.size != 5 * header["count"]:
        raise ValueError(f"{path}: expected {header['count']} rows")
    return body.reshape(-1, 5).astype(np.float64), header


def save_checkpoint(directory, scene: Scene, step: Optional[int] = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    extra = {} if step is None else {"step": int(step)}
    save_materials(d / "materials.bin", scene.mesh.vertex_materials, extra)
    save_envmap(d / "env.hdr", scene.env)


# ----------------------------------------------------------------------------
# scene assembly


def _env_from_config(cfg: SceneConfig) -> EnvMap:
    if isinstance(cfg.env, str):
        return load_envmap(cfg.env)
    val = np.asarray(cfg.env, dtype=np.float64)
    if val.size not in (1, 3) or np.any(val < 0):
        raise ValueError("env constant must be a non-negative scalar or RGB triple")
    env = EnvMap.constant(1.0, cfg.env_height, cfg.env_width)
    env.radiance[:] = val.reshape(-1)
    return build_sampling_table(env)


def build_scene(cfg: SceneConfig, env: Optional[EnvMap] = None, materials: Optional[np.ndarray] = None) -> Scene:
    """Mesh + env + initial materials from a config.

    ``materials`` (or ``cfg.materials``) overrides the constant initialisation.
    """
    if not cfg.mesh:
        raise ValueError("config has no mesh")
    mesh: Mesh = load_mesh(cfg.mesh)
    if cfg.env_up == "y":
        mesh = Mesh.from_arrays(mesh.vertices @ Y_UP_TO_Z_UP.T, mesh.faces, mesh.vertex_normals @ Y_UP_TO_Z_UP.T)
    mats = mesh.vertex_materials
    mats[:, :3] = np.asarray(cfg.albedo, dtype=np.float64).reshape(-1)
    mats[:, 3] = cfg.roughness
    mats[:, 4] = cfg.metallic if cfg.metallic_enabled else 0.0
    if materials is None and cfg.materials:
        materials, _ = load_materials(cfg.materials)
    if materials is not None:
        if materials.shape != mats.shape:
            raise ValueError(f"materials have {materials.shape[0]} rows, mesh has {mats.shape[0]} vertices")
        mats[:] = materials
    if env is None:
        env = _env_from_config(cfg)
    return Scene(mesh, env, cfg.specular, cfg.metallic_enabled)
