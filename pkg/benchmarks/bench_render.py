"""Compare the numba and numpy kernel lanes on representative workloads.

Usage: python benchmarks/bench_render.py [--size 64] [--count 1000] [--reps 20]

Runs projection + forward compositing + full backward on the same random
scene through both lanes, checks they agree, and prints a timing table.
"""

import argparse
import time

import numpy as np

from evsplat import _kernels_numba, _kernels_numpy
from evsplat.camera import CameraIntrinsics
from evsplat.render import RenderConfig
from evsplat.scene import SceneMap
from evsplat.se3 import SE3Pose


def make_scene(rng, count):
    means = np.stack([rng.uniform(-1.0, 1.0, count),
                      rng.uniform(-1.0, 1.0, count),
                      rng.uniform(1.0, 2.0, count)], axis=1)
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return SceneMap(means=means,
                    log_scales=rng.uniform(-3.3, -2.3, (count, 3)),
                    rotations=quats,
                    opacity_logits=rng.uniform(0.0, 2.0, count),
                    colors=rng.uniform(np.log(0.15), np.log(0.95), (count, 1)))


def run_lane(lane, scene, intr, cfg, g_bright, reps):
    pose = SE3Pose.identity()
    inv = pose.inverse()
    Rcw, tcw = inv.rotation_matrix(), inv.translation
    bg = np.full(1, cfg.background)

    def project():
        return lane.project(scene.means, scene.log_scales, scene.rotations,
                            scene.opacity_logits, Rcw, tcw, intr.fx, intr.fy,
                            intr.cx, intr.cy, intr.width, intr.height,
                            cfg.near_plane, cfg.cov_floor, cfg.exact)

    proj = project()
    valid_idx = np.flatnonzero(proj[0])
    order = valid_idx[np.argsort(proj[4][valid_idx], kind="stable")]

    def forward():
        return lane.forward(proj, order, scene.colors, bg, intr.width, intr.height,
                            cfg.t_min, cfg.sigma_max, cfg.alpha_clamp, cfg.exact)

    bright, depth, amap, cache = forward()

    def backward():
        return lane.backward(proj, order, cache, scene.colors, bg, intr.width,
                             intr.height, cfg.t_min, cfg.sigma_max, cfg.alpha_clamp,
                             cfg.exact, g_bright, np.zeros_like(depth),
                             np.zeros_like(amap), True, intr.fx, intr.fy, Rcw,
                             (bright, depth, amap), scene.rotations,
                             scene.log_scales, scene.opacity_logits)

    grads = backward()
    times = {}
    for name, fn in (("project", project), ("forward", forward), ("backward", backward)):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        times[name] = (time.perf_counter() - t0) / reps * 1e3
    return times, (bright, depth, amap), grads


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    scene = make_scene(rng, args.count)
    intr = CameraIntrinsics(45.0, 45.0, args.size / 2, args.size / 2,
                            args.size, args.size)
    cfg = RenderConfig()
    g_bright = rng.normal(size=(args.size, args.size, 1))

    print(f"scene: {args.count} gaussians at {args.size}x{args.size}, {args.reps} reps")
    results = {}
    for lane in (_kernels_numba, _kernels_numpy):
        times, maps, grads = run_lane(lane, scene, intr, cfg, g_bright, args.reps)
        results[lane.BACKEND_NAME] = (times, maps, grads)
        row = "  ".join(f"{k}: {v:8.3f} ms" for k, v in times.items())
        print(f"{lane.BACKEND_NAME:>6}  {row}")

    (ta, ma, ga), (tb, mb, gb) = results["numba"], results["numpy"]
    worst_map = max(np.abs(x - y).max() for x, y in zip(ma, mb))
    worst_grad = max(np.abs(x - y).max() for x, y in zip(ga, gb))
    print(f"lane agreement: maps {worst_map:.2e}, grads {worst_grad:.2e}")
    total_a = sum(ta.values())
    total_b = sum(tb.values())
    print(f"speedup (numpy/numba): {total_b / total_a:.1f}x")


if __name__ == "__main__":
    main()
