"""Time the hot kernels with the numba JIT and with the pure-python fallback.

Each mode runs in its own interpreter because the switch is read at import.
Usage: python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, math, time
import numpy as np
from restir_ir import _jit
from restir_ir.bvh import build_lbvh, intersect_batch
from restir_ir.config import RenderConfig
from restir_ir.denoise import AtrousParams, atrous_filter
from restir_ir.envmap import EnvMap
from restir_ir.mesh import icosphere, grid_plane
from restir_ir.render import Camera, Scene, render_frame

repeat = int(__import__("sys").argv[1])
mesh = icosphere(3, 0.6).concat(grid_plane(16, 16, (4.0, 4.0), (0.0, 0.0, -0.6)))
scene = Scene(mesh, EnvMap.constant(1.0, 16, 32))
cam = Camera.look_at((2.5, 0.0, 1.5), (0.0, 0.0, -0.2), resolution=(16, 16))
rng = np.random.default_rng(0)
origins = rng.normal(size=(2000, 3)) * 2.0
dirs = -origins / np.linalg.norm(origins, axis=1, keepdims=True)
fb = render_frame(scene, cam, RenderConfig(spp=1), seed=0)
ap = AtrousParams.for_scene(mesh.diagonal)

cases = {
    "bvh_build": lambda: build_lbvh(mesh),
    "intersect_2k_rays": lambda: intersect_batch(scene.bvh, mesh, origins, dirs),
    "render_16x16_spp1": lambda: render_frame(scene, cam, RenderConfig(spp=1), record=True, seed=1),
    "atrous_16x16": lambda: atrous_filter(fb, ap),
}
out = {"jit": _jit.JIT_ENABLED}
for name, fn in cases.items():
    fn()  # warm-up (compilation or cache load)
    best = math.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    out[name] = best
print(json.dumps(out))
"""


def run(disable_jit, repeat):
    env = dict(os.environ, RESTIR_IR_DISABLE_JIT="1" if disable_jit else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", default=None)
    args = ap.parse_args()
    jit = run(False, args.repeat)
    py = run(True, args.repeat)
    print(f"{'kernel':<20} {'numba [s]':>10} {'python [s]':>11} {'speedup':>8}")
    for k in jit:
        if k == "jit":
            continue
        print(f"{k:<20} {jit[k]:>10.4f} {py[k]:>11.4f} {py[k] / jit[k]:>7.1f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"numba": jit, "python": py}, f, indent=1)


if __name__ == "__main__":
    main()
