import math

import numpy as np
import pytest

from evsplat.camera import CameraIntrinsics
from evsplat.scene import SceneMap
from evsplat.se3 import SE3Pose, Twist, se3_exp


def make_random_scene(rng, count=15, n_channels=1, depth_range=(1.5, 3.5),
                      lateral=1.2, scale_range=(-2.5, -0.9), logit_range=(-2.0, 2.5)):
    """Random test scene in front of the camera (looking +z from the origin)."""
    means = np.stack([rng.uniform(-lateral, lateral, count),
                      rng.uniform(-lateral, lateral, count),
                      rng.uniform(*depth_range, count)], axis=1)
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return SceneMap(
        means=means,
        log_scales=rng.uniform(*scale_range, (count, 3)),
        rotations=quats,
        opacity_logits=rng.uniform(*logit_range, count),
        colors=rng.uniform(np.log(0.15), np.log(0.95), (count, n_channels)),
    )


def make_random_pose(rng, rot=0.08, trans=0.15):
    """Small random camera-to-world pose perturbation around the origin view."""
    w = rng.normal(size=3)
    w *= rot * rng.uniform(0, 1) / np.linalg.norm(w)
    return se3_exp(Twist(w, rng.uniform(-trans, trans, 3)))


def small_intrinsics(size=16, focal=20.0):
    return CameraIntrinsics(fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0,
                            width=size, height=size)


def brute_force_render(scene, pose, intr, cfg):
    """Independent per-pixel compositor: every Gaussian at every pixel, exact
    z sort, no bounding boxes, no transmittance termination.

    Follows the alpha model definition directly: alpha = clamp(o * exp(-sigma))
    inside the sigma_max bound, composited near to far.
    """
    inv = pose.inverse()
    Rcw = inv.rotation_matrix()
    tcw = inv.translation
    entries = []
    for i in range(scene.count):
        q = scene.rotations[i] / np.linalg.norm(scene.rotations[i])
        w, x, y, z = q
        R = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])
        cov_w = R @ np.diag(np.exp(2.0 * scene.log_scales[i])) @ R.T
        xc = Rcw @ scene.means[i] + tcw
        if xc[2] <= cfg.near_plane:
            continue
        cov_c = Rcw @ cov_w @ Rcw.T
        J = np.array([[intr.fx / xc[2], 0.0, -intr.fx * xc[0] / xc[2] ** 2],
                      [0.0, intr.fy / xc[2], -intr.fy * xc[1] / xc[2] ** 2]])
        cov2 = J @ cov_c @ J.T + cfg.cov_floor * np.eye(2)
        conic = np.linalg.inv(cov2)
        m2d = np.array([intr.fx * xc[0] / xc[2] + intr.cx,
                        intr.fy * xc[1] / xc[2] + intr.cy])
        o = 1.0 / (1.0 + math.exp(-scene.opacity_logits[i]))
        entries.append((xc[2], i, m2d, conic, o))
    entries.sort(key=lambda e: (e[0], e[1]))

    ch = scene.n_channels
    bright = np.zeros((intr.height, intr.width, ch))
    depth = np.zeros((intr.height, intr.width))
    amap = np.zeros((intr.height, intr.width))
    for v in range(intr.height):
        for u in range(intr.width):
            T = 1.0
            for zc, i, m2d, conic, o in entries:
                d = np.array([u - m2d[0], v - m2d[1]])
                sig = 0.5 * d @ conic @ d
                if sig > cfg.sigma_max:
                    continue
                a = min(o * math.exp(-sig), cfg.alpha_clamp)
                wgt = a * T
                bright[v, u] += wgt * scene.colors[i]
                depth[v, u] += wgt * zc
                amap[v, u] += wgt
                T *= 1.0 - a
            bright[v, u] += T * cfg.background
    return bright[..., 0] if ch == 1 else bright, depth, amap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
