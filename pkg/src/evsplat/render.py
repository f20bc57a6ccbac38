"""Differentiable forward splatting and its analytic backward pass.

Brightness is composited in log space so a brightness-change map is a plain
difference of two renders; ``exp`` is applied only on image export. Poses
passed to `render`/`render_backward` are camera-to-world (the trajectory
convention); the world-to-camera transform is formed internally.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .camera import CameraIntrinsics
from .errors import DataError
from .kernels import active as _backend
from .scene import MID_GRAY_LOG, GaussianPrimitive, SceneMap
from .se3 import SE3Pose

RAW_MAGIC = b"IEGF"


@dataclass(frozen=True)
class RenderConfig:
    """Rendering model knobs.

    The 3-sigma ellipse bound is part of the alpha model itself; `exact`
    only switches off the loop shortcuts (per-Gaussian bounding boxes and
    the off-image culling margin) so every Gaussian is evaluated at every
    pixel. `no_termination()` additionally disables the transmittance
    cutoff; `smooth()` also lifts the ellipse bound, giving the everywhere-
    differentiable model used for finite-difference gradient checks.
    """

    near_plane: float = 0.01
    sigma_cutoff: float = 3.0          # Gaussians contribute within their 3-sigma ellipse
    alpha_clamp: float = 0.999
    cov_floor: float = 0.3             # px^2 added to the 2D covariance diagonal
    t_min: float = 1e-4                # transmittance early-termination cutoff
    background: float = MID_GRAY_LOG   # log mid-gray
    exact: bool = False                # evaluate all Gaussians at all pixels

    @property
    def sigma_max(self):
        return 0.5 * self.sigma_cutoff ** 2

    def no_termination(self):
        return replace(self, t_min=0.0, exact=True)

    def smooth(self):
        return replace(self, t_min=0.0, exact=True, sigma_cutoff=float("inf"))


@dataclass
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    z_depth: float
    source_index: int


@dataclass
class RenderOutput:
    brightness: np.ndarray  # (H, W) grayscale or (H, W, 3) color, log space
    depth: np.ndarray       # (H, W) alpha-weighted z depth
    alpha: np.ndarray       # (H, W) accumulated opacity in [0, 1]

    def normalized_depth(self, min_alpha):
        """Depth / alpha where alpha >= min_alpha, else 0 (invalid marker)."""
        ok = self.alpha >= min_alpha
        out = np.zeros_like(self.depth)
        out[ok] = self.depth[ok] / self.alpha[ok]
        return out


@dataclass
class SceneGradients:
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    pose: np.ndarray  # 6-vector twist (rot, trans) on the camera-to-world pose


class RenderCache:
    """Forward-pass state reused by the backward pass when available."""

    def __init__(self, proj, order, lane_cache, maps, Rcw):
        self.proj = proj
        self.order = order
        self.lane_cache = lane_cache
        self.maps = maps
        self.Rcw = Rcw


def _world_to_camera(pose_c2w: SE3Pose):
    inv = pose_c2w.inverse()
    return inv.rotation_matrix(), inv.translation


def _project_scene(scene: SceneMap, Rcw, tcw, intr, cfg):
    return _backend.project(
        scene.means, scene.log_scales, scene.rotations, scene.opacity_logits,
        Rcw, tcw, intr.fx, intr.fy, intr.cx, intr.cy,
        intr.width, intr.height, cfg.near_plane, cfg.cov_floor, cfg.exact)


def _depth_order(valid, zs):
    idx = np.flatnonzero(valid)
    return idx[np.argsort(zs[idx], kind="stable")]


def project_gaussian(g: GaussianPrimitive, world_to_camera: SE3Pose,
                     intr: CameraIntrinsics, cfg: RenderConfig = RenderConfig()):
    """Project a single primitive; returns None when culled."""
    Rcw = world_to_camera.rotation_matrix()
    tcw = world_to_camera.translation
    proj = _backend.project(
        g.mean[None], g.log_scale[None], g.rotation[None],
        np.array([g.opacity_logit]), Rcw, tcw,
        intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height,
        cfg.near_plane, cfg.cov_floor, cfg.exact)
    valid, mean2d, conic, cov2d, zs = proj[:5]
    if not valid[0]:
        return None
    cov = np.array([[cov2d[0, 0], cov2d[0, 1]], [cov2d[0, 1], cov2d[0, 2]]])
    return ProjectedGaussian(mean2d=mean2d[0].copy(), cov2d=cov,
                             z_depth=float(zs[0]), source_index=0)


def render(scene: SceneMap, pose: SE3Pose, intr: CameraIntrinsics,
           cfg: RenderConfig = RenderConfig(), return_cache=False):
    """Splat the scene from a camera-to-world pose into brightness/depth/alpha."""
    Rcw, tcw = _world_to_camera(pose)
    ch = scene.n_channels
    bg = np.full(ch, cfg.background)
    if scene.count == 0:
        h, w = intr.height, intr.width
        bright = np.tile(bg, (h, w, 1))
        out = RenderOutput(brightness=bright[..., 0] if ch == 1 else bright,
                           depth=np.zeros((h, w)), alpha=np.zeros((h, w)))
        return (out, None) if return_cache else out
    proj = _project_scene(scene, Rcw, tcw, intr, cfg)
    order = _depth_order(proj[0], proj[4])
    bright, depth, amap, lane_cache = _backend.forward(
        proj, order, scene.colors, bg, intr.width, intr.height,
        cfg.t_min, cfg.sigma_max, cfg.alpha_clamp, cfg.exact)
    out = RenderOutput(brightness=bright[..., 0] if ch == 1 else bright,
                       depth=depth, alpha=amap)
    if return_cache:
        return out, RenderCache(proj, order, lane_cache, (bright, depth, amap), Rcw)
    return out


def render_backward(scene: SceneMap, pose: SE3Pose, intr: CameraIntrinsics,
                    grad_brightness=None, grad_depth=None, grad_alpha=None,
                    cfg: RenderConfig = RenderConfig(), cache: RenderCache = None,
                    scene_grads=True) -> SceneGradients:
    """Gradients of the composited maps w.r.t. scene parameters and the pose.

    Upstream gradients default to zero maps. When no forward cache is given
    the blending state is recomputed front-to-back, which reproduces the
    forward pass bit-for-bit.
    """
    h, w, ch = intr.height, intr.width, scene.n_channels
    gI = np.zeros((h, w, ch)) if grad_brightness is None else \
        np.ascontiguousarray(grad_brightness, dtype=np.float64).reshape(h, w, ch)
    gD = np.zeros((h, w)) if grad_depth is None else np.asarray(grad_depth, dtype=np.float64)
    gV = np.zeros((h, w)) if grad_alpha is None else np.asarray(grad_alpha, dtype=np.float64)

    zeros = SceneGradients(np.zeros((scene.count, 3)), np.zeros((scene.count, 3)),
                           np.zeros((scene.count, 4)), np.zeros(scene.count),
                           np.zeros((scene.count, ch)), np.zeros(6))
    if scene.count == 0:
        return zeros

    bg = np.full(ch, cfg.background)
    if cache is None:
        Rcw, tcw = _world_to_camera(pose)
        proj = _project_scene(scene, Rcw, tcw, intr, cfg)
        order = _depth_order(proj[0], proj[4])
        bright, depth, amap, lane_cache = _backend.forward(
            proj, order, scene.colors, bg, w, h, cfg.t_min, cfg.sigma_max,
            cfg.alpha_clamp, cfg.exact)
        cache = RenderCache(proj, order, lane_cache, (bright, depth, amap), Rcw)

    g_means, g_ls, g_q, g_ol, g_col, g_pose = _backend.backward(
        cache.proj, cache.order, cache.lane_cache, scene.colors, bg, w, h,
        cfg.t_min, cfg.sigma_max, cfg.alpha_clamp, cfg.exact, gI, gD, gV,
        scene_grads, intr.fx, intr.fy, cache.Rcw, cache.maps,
        scene.rotations, scene.log_scales, scene.opacity_logits)

    # chain the world-to-camera pose gradient onto the camera-to-world twist:
    # Tcw = (Twc exp(d))^-1 = exp(-d) Tcw, so the lane kernels already
    # differentiate w.r.t. the right-perturbation of the camera-to-world pose.
    return SceneGradients(means=g_means, log_scales=g_ls, rotations=g_q,
                          opacity_logits=g_ol, colors=g_col, pose=g_pose)


def visibility_mask(out: RenderOutput, lambda_v: float):
    """True where accumulated alpha falls below lambda_v (unexplored pixels)."""
    if not 0.0 < lambda_v < 1.0:
        raise ValueError(f"lambda_v must be in (0, 1), got {lambda_v}")
    return out.alpha < lambda_v


def write_pgm(path, image_linear, normalize=False):
    """8-bit binary PGM of a linear-intensity image; optional min-max scaling."""
    img = np.asarray(image_linear, dtype=np.float64)
    if normalize:
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    data = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(data.tobytes())


def write_raw(path, image):
    """Raw float32 image: IEGF magic, width/height/channels u32, then data."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(img.astype("<f4").tobytes())


def read_raw(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RAW_MAGIC:
            raise DataError(f"{path}: bad raw-image magic {magic!r}")
        w, h, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(w * h * c * 4), dtype="<f4")
    if data.size != w * h * c:
        raise DataError(f"{path}: truncated raw image")
    img = data.reshape(h, w, c).astype(np.float64)
    return img[..., 0] if c == 1 else img
