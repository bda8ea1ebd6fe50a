"""Typed configuration with strict JSON loading (unknown keys are errors)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union, get_type_hints


class ConfigError(ValueError):
    pass


@dataclass
class RenderConfig:
    spp: int = 32
    bounces: int = 3  # shaded surface vertices per path, primary included
    seed: int = 0
    ris_candidates: int = 32
    reuse_enabled: bool = True  # False: plain importance sampling of the env for direct light
    spatial_passes: int = 1
    spatial_neighbors: int = 4
    spatial_radius_px: int = 8
    spatial_normal_deg: float = 25.0
    spatial_depth_frac: float = 0.05
    temporal_enabled: bool = True
    temporal_cap: float = 20.0
    ris_visibility: bool = False
    indirect_samples: int = 1
    indirect_light_fraction: float = 0.5
    clamp: float = 20.0  # times the 99th percentile env luminance; 0 disables
    background: str = "env"  # or "black"

    def validate(self):
        if self.spp < 1:
            raise ConfigError("spp must be >= 1")
        if not 1 <= self.bounces <= 3:
            raise ConfigError("bounces must be in [1, 3]")
        if self.ris_candidates < 1:
            raise ConfigError("ris_candidates must be >= 1")
        if self.indirect_samples < 0:
            raise ConfigError("indirect_samples must be >= 0")
        if not 0.0 <= self.indirect_light_fraction < 1.0:
            raise ConfigError("indirect_light_fraction must be in [0, 1)")
        if self.background not in ("env", "black"):
            raise ConfigError("background must be 'env' or 'black'")
        if self.clamp < 0 or self.temporal_cap <= 0:
            raise ConfigError("clamp must be >= 0 and temporal_cap > 0")


@dataclass
class DenoiseConfig:
    enabled: bool = False
    sigma_rt: float = 0.5
    sigma_n: float = 0.3
    sigma_x: Optional[float] = None  # default 0.0125 * scene diagonal
    iterations: int = 3
    mode: str = "color"  # or "demodulated"

    def validate(self):
        if min(self.sigma_rt, self.sigma_n) <= 0 or (self.sigma_x is not None and self.sigma_x <= 0):
            raise ConfigError("denoiser sigmas must be > 0")
        if self.iterations < 1:
            raise ConfigError("denoiser iterations must be >= 1")
        if self.mode not in ("color", "demodulated"):
            raise ConfigError("denoise.mode must be 'color' or 'demodulated'")


@dataclass
class OptimConfig:
    steps: int = 2000
    lr_env: float = 1e-2
    lr_material: float = 5e-3
    lr_decay: float = 1.0  # learning-rate multiplier reached at the last step (exponential schedule)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_albedo: float = 0.03
    lambda_roughness: float = 0.01
    lambda_light: float = 0.005
    smooth_eps_frac: float = 0.005
    smooth_samples: int = 4096
    optimize_env: bool = True
    optimize_albedo: bool = True
    optimize_roughness: bool = True
    log_every: int = 10
    snapshot_every: int = 0
    divergence_factor: float = 1e3
    divergence_patience: int = 50

    def validate(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if min(self.lr_env, self.lr_material) < 0:
            raise ConfigError("learning rates must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must be in (0, 1]")


@dataclass
class SceneConfig:
    mesh: str = ""
    env: Union[str, float, list] = 0.5  # .hdr path or constant radiance
    env_height: int = 256
    env_width: int = 512
    env_up: str = "z"  # "y": mesh, cameras and map are Y-up and get rotated to Z-up at load
    albedo: Union[float, list] = 0.5
    roughness: float = 0.5
    metallic: float = 0.0
    metallic_enabled: bool = False
    specular: float = 1.0
    materials: str = ""  # optional materials.bin checkpoint
    dataset: str = ""
    render: RenderConfig = field(default_factory=RenderConfig)
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def validate(self):
        if self.env_up not in ("y", "z"):
            raise ConfigError("env_up must be 'y' or 'z'")
        if not 0.0 <= self.specular <= 1.0:
            raise ConfigError("specular must be in [0, 1]")
        self.render.validate()
        self.denoise.validate()
        self.optim.validate()


def _coerce(tp, value, where):
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return from_dict(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value  # unions are checked by the consumer


def from_dict(cls, data: dict, where: str = "config"):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        tp = hints[k]
        if getattr(tp, "__origin__", None) is Union and type(None) in tp.__args__:
            tp = next(a for a in tp.__args__ if a is not type(None))
            kwargs[k] = None if v is None else _coerce(tp, v, f"{where}.{k}")
        else:
            kwargs[k] = _coerce(tp, v, f"{where}.{k}")
    obj = cls(**kwargs)
    if hasattr(obj, "validate"):
        obj.validate()
    return obj


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> SceneConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = from_dict(SceneConfig, data)
    base = path.parent
    for key in ("mesh", "materials", "dataset"):
        val = getattr(cfg, key)
        if val and not Path(val).is_absolute():
            setattr(cfg, key, str(base / val))
    if isinstance(cfg.env, str) and not Path(cfg.env).is_absolute():
        cfg.env = str(base / cfg.env)
    return cfg
