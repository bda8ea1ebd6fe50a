"""Command line entry point: render, optimize, relight, eval, info."""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import _jit
from .config import ConfigError, RenderConfig, load_config
from .denoise import AtrousParams, atrous_filter
from .envmap import load_envmap
from .io import (
    DatasetError,
    build_scene,
    load_dataset,
    load_materials,
    read_float_image,
    read_png,
    save_checkpoint,
    write_float_image,
    write_png,
)
from .metrics import metric_psnr, metric_ssim
from .optim import DivergenceError, align_albedo_scale, optimize, srgb_encode
from .render import Camera, render_frame, render_reference

log = logging.getLogger("restir_ir")

COMPARISON_SPACE = "srgb-8bit-clamped"


class CliError(Exception):
    pass


def _render_cfg(cfg, args) -> RenderConfig:
    rc = cfg.render
    if getattr(args, "spp", None) is not None:
        rc.spp = args.spp
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    if getattr(args, "bounces", None) is not None:
        rc.bounces = args.bounces
    rc.validate()
    return rc


def _cameras(cfg, args):
    """(index, Camera) pairs from --eye/--target or the dataset split."""
    if args.eye is not None:
        if args.target is None:
            raise CliError("--eye needs --target")
        cam = Camera.look_at(args.eye, args.target, fov_x=math.radians(args.fov), resolution=tuple(args.res))
        return [(0, cam)]
    if not cfg.dataset:
        raise CliError("no camera: pass --eye/--target or set 'dataset' in the scene config")
    ds = load_dataset(cfg.dataset, args.split, y_up=cfg.env_up == "y", images=False)
    idx = range(len(ds)) if args.view is None else [args.view]
    out = []
    for i in idx:
        if not 0 <= i < len(ds):
            raise CliError(f"view {i} out of range (split has {len(ds)})")
        cam = ds.views[i].camera
        if args.res is not None:
            cam = Camera(cam.camera_to_world, cam.fov_x, tuple(args.res))
        out.append((i, cam))
    return out


def _denoise(scene, cfg, fb):
    dc = cfg.denoise
    ap = AtrousParams.for_scene(scene.mesh.diagonal, dc.sigma_rt, dc.sigma_n, dc.sigma_x, dc.iterations)
    return atrous_filter(fb, ap)[0]


def _write_outputs(out: Path, name: str, fb, color, aovs=True):
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / f"{name}.png", color, fb.alpha)
    write_float_image(out / f"{name}_color.f32", color)
    if aovs:
        write_png(out / f"{name}_albedo.png", fb.albedo_aov, fb.alpha)
        write_float_image(out / f"{name}_normal.f32", fb.normal_aov)
        write_float_image(out / f"{name}_position.f32", fb.position_aov)
        write_float_image(out / f"{name}_depth.f32", fb.depth)
        write_float_image(out / f"{name}_alpha.f32", fb.alpha)
        write_float_image(out / f"{name}_roughness.f32", fb.roughness_aov)
        write_float_image(out / f"{name}_diffuse.f32", fb.diffuse_demod)
        write_float_image(out / f"{name}_specular.f32", fb.specular_demod)


def _render_views(scene, cfg, rc, cams, out: Path, reference_spp=None, denoise=False, aovs=True):
    names = []
    for i, cam in cams:
        if reference_spp:
            fb = render_reference(scene, cam, reference_spp, rc.seed, rc.bounces, rc.background)
        else:
            fb = render_frame(scene, cam, rc)
        color = _denoise(scene, cfg, fb) if denoise else fb.color
        name = f"r_{i}"
        _write_outputs(out, name, fb, color, aovs)
        names.append(name)
        log.info("wrote %s", out / name)
    return names


def cmd_render(args):
    cfg = load_config(args.scene)
    rc = _render_cfg(cfg, args)
    scene = build_scene(cfg)
    cams = _cameras(cfg, args)
    denoise = args.denoise or cfg.denoise.enabled
    _render_views(scene, cfg, rc, cams, Path(args.out), args.reference, denoise)
    return 0


def cmd_optimize(args):
    cfg = load_config(args.scene)
    rc = _render_cfg(cfg, args)
    oc = cfg.optim
    if args.steps is not None:
        oc.steps = args.steps
    if not cfg.dataset:
        raise CliError("scene config has no dataset")
    ds = load_dataset(cfg.dataset, args.split, y_up=cfg.env_up == "y")
    scene = build_scene(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def snapshot(step, params):
        save_checkpoint(out / f"snapshot_{step:06d}", params.scene, step)

    try:
        _, history = optimize(scene, ds.views, rc, oc, cfg.denoise, seed=rc.seed, log_path=out / "log.csv",
                              callback=snapshot, optimize_metallic=cfg.metallic_enabled)
    except DivergenceError as e:
        save_checkpoint(out / "diverged", scene)
        raise CliError(f"optimization diverged: {e}") from e
    save_checkpoint(out, scene, oc.steps)
    if history:
        log.info("final loss %.6g", history[-1].loss)
    return 0


def _exposure_scale(pred, gt, mask):
    m = mask > 0.5
    num = float((pred[m] * gt[m]).sum())
    den = float((pred[m] * pred[m]).sum())
    return num / den if den > 0 else 1.0


def cmd_relight(args):
    cfg = load_config(args.scene)
    rc = _render_cfg(cfg, args)
    ckpt = Path(args.checkpoint)
    mats, _ = load_materials(ckpt / "materials.bin")
    env = load_envmap(args.env)
    scene = build_scene(cfg, env=env, materials=mats)
    cams = _cameras(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt = load_dataset(args.gt, args.split, y_up=cfg.env_up == "y") if args.exposure else None
    for i, cam in cams:
        fb = render_frame(scene, cam, rc)
        color = _denoise(scene, cfg, fb) if (args.denoise or cfg.denoise.enabled) else fb.color
        if gt is not None:
            v = gt.views[i]
            s = _exposure_scale(color, v.image, v.mask)
            color = color * s
            log.info("view %d exposure scale %.4f", i, s)
        _write_outputs(out, f"r_{i}", fb, color, aovs=False)
    return 0


def _load_for_eval(path: Path):
    if path.suffix == ".png":
        rgb, alpha = read_png(path)
    else:
        rgb = read_float_image(path)[..., :3].astype(np.float64)
        alpha = None
    return rgb, alpha


def cmd_eval(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pattern = args.pattern
    names = sorted(p.name for p in pred_dir.glob(pattern))
    if not names:
        raise CliError(f"no files matching {pattern} in {pred_dir}")
    pairs = []
    for n in names:
        g = gt_dir / n
        if not g.exists():
            raise CliError(f"{g} missing in ground truth folder")
        pa, _ = _load_for_eval(pred_dir / n)
        ga, alpha = _load_for_eval(g)
        if pa.shape != ga.shape:
            raise CliError(f"{n}: resolution mismatch {pa.shape} vs {ga.shape}")
        mask = np.ones(ga.shape[:2]) if alpha is None else alpha
        pairs.append((n, pa, ga, mask))
    scale = np.ones(3)
    if args.albedo:
        scale = align_albedo_scale(np.concatenate([p[1][p[3] > 0.5] for p in pairs])[None],
                                   np.concatenate([p[2][p[3] > 0.5] for p in pairs])[None])
    rows = []
    for n, pa, ga, mask in pairs:
        a = srgb_encode(pa * scale)
        b = srgb_encode(ga)
        # background pixels carry no information when the reference has alpha
        a = a * (mask[..., None] > 0.5)
        b = b * (mask[..., None] > 0.5)
        rows.append((n, metric_psnr(a, b, mask), metric_ssim(a, b)))
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", "psnr", "ssim"])
    for n, p, s in rows:
        w.writerow([n, f"{p:.4f}", f"{s:.6f}"])
    w.writerow(["mean", f"{np.mean([r[1] for r in rows]):.4f}", f"{np.mean([r[2] for r in rows]):.6f}"])
    text = buf.getvalue()
    meta = {"comparison_space": COMPARISON_SPACE, "albedo_scale": [float(x) for x in scale]}
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out + ".json").write_text(json.dumps(meta))
    sys.stdout.write(f"# {json.dumps(meta)}\n{text}")
    return 0


def cmd_info(args):
    cfg = load_config(args.scene)
    scene = build_scene(cfg)
    m = scene.mesh
    lo, hi = m.bounds
    info = {
        "vertices": m.num_vertices,
        "faces": m.num_faces,
        "bounds": [lo.tolist(), hi.tolist()],
        "diagonal": m.diagonal,
        "bvh_nodes": int(len(scene.bvh.child)),
        "env_shape": list(scene.env.shape),
        "env_power": scene.env.total_power().tolist(),
        "metallic_enabled": scene.metallic_enabled,
        "threads": _jit.num_threads(),
        "jit": _jit.JIT_ENABLED,
    }
    if cfg.dataset:
        for split in ("train", "test"):
            try:
                ds = load_dataset(cfg.dataset, split, y_up=cfg.env_up == "y")
            except DatasetError:
                continue
            info[f"{split}_views"] = len(ds)
            info[f"{split}_resolution"] = list(ds.resolution)
    print(json.dumps(info, indent=1))
    return 0


def _camera_args(p):
    p.add_argument("--split", default="train")
    p.add_argument("--view", type=int, default=None, help="view index (default: all views of the split)")
    p.add_argument("--eye", type=float, nargs=3, default=None)
    p.add_argument("--target", type=float, nargs=3, default=None)
    p.add_argument("--fov", type=float, default=40.0, help="horizontal fov in degrees for --eye")
    p.add_argument("--res", type=int, nargs=2, default=None, metavar=("W", "H"))


def _render_args(p):
    p.add_argument("--spp", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--bounces", type=int, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="restir-ir", description=__doc__)
    ap.add_argument("--threads", type=int, default=0, help="cap worker threads (also RESTIR_IR_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render views of a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", default="render_out")
    p.add_argument("--reference", type=int, default=None, metavar="SPP", help="plain path tracing at SPP")
    p.add_argument("--denoise", action="store_true")
    _camera_args(p)
    _render_args(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("optimize", help="recover materials and lighting from a dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", default="checkpoint")
    p.add_argument("--split", default="train")
    p.add_argument("--steps", type=int, default=None)
    _render_args(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("relight", help="render a checkpoint under a new env map")
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True, help="Radiance .hdr")
    p.add_argument("--out", default="relight_out")
    p.add_argument("--exposure", action="store_true", help="scale each image to best match --gt")
    p.add_argument("--gt", default=None, help="dataset folder with ground-truth relit views")
    p.add_argument("--denoise", action="store_true")
    _camera_args(p)
    _render_args(p)
    p.set_defaults(func=cmd_relight, split="test")

    p = sub.add_parser("eval", help="PSNR / SSIM of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pattern", default="*.png")
    p.add_argument("--albedo", action="store_true", help="align per-channel albedo scale first")
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="print scene statistics")
    p.add_argument("--scene", required=True)
    p.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _jit.set_threads(args.threads)
    log.debug("threads %d", _jit.num_threads())
    if args.command == "relight" and args.exposure and not args.gt:
        print("error: --exposure needs --gt", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliError, ConfigError, DatasetError, ValueError, OSError) as e:
        msg = " ".join(str(e).split())
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
