"""Gaussian scene container: covariances, seeding, growing, pruning, checkpoints.

The scene is stored struct-of-arrays so the render kernels can consume the
fields directly. Quaternions are kept unit-norm by renormalizing after every
optimizer update; covariances are built as R * diag(exp(log_scale))^2 * R^T.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics
from .errors import DataError, EmptyDepth
from .se3 import SE3Pose, quat_normalize, quat_to_matrix

CHECKPOINT_MAGIC = b"IEGS"
CHECKPOINT_VERSION = 1

MID_GRAY_LOG = float(np.log(0.5))


@dataclass(frozen=True)
class BoundingBox:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if not np.all(lo < hi):
            raise ValueError(f"bounding box needs min < max per axis, got {lo} / {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def center(self):
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    def inflated(self, factor):
        half = 0.5 * (self.max_corner - self.min_corner) * (1.0 + factor)
        return BoundingBox(self.center - half, self.center + half)

    def contains(self, points):
        p = np.atleast_2d(points)
        return np.all((p >= self.min_corner) & (p <= self.max_corner), axis=-1)


@dataclass
class GaussianPrimitive:
    """Single anisotropic Gaussian; a convenience view over SceneMap rows."""

    mean: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray  # unit quaternion, wxyz
    opacity_logit: float
    color: np.ndarray  # (n_channels,) log-brightness

    @property
    def opacity(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logit))


def covariance_3d(g: GaussianPrimitive):
    """3x3 covariance R * S * S^T * R^T with S = diag(exp(log_scale))."""
    R = quat_to_matrix(quat_normalize(g.rotation))
    s2 = np.exp(2.0 * np.asarray(g.log_scale, dtype=np.float64))
    cov = (R * s2) @ R.T
    return 0.5 * (cov + cov.T)


@dataclass
class SceneMap:
    """Growable set of Gaussian primitives, struct-of-arrays."""

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    generations: np.ndarray = None
    epoch: int = 0

    def __post_init__(self):
        if self.generations is None:
            self.generations = np.zeros(len(self.means), dtype=np.int64)

    @staticmethod
    def empty(n_channels=1):
        return SceneMap(
            means=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros(0),
            colors=np.zeros((0, n_channels)),
        )

    @property
    def count(self):
        return len(self.means)

    @property
    def n_channels(self):
        return self.colors.shape[1]

    def opacities(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def primitive(self, i) -> GaussianPrimitive:
        return GaussianPrimitive(
            mean=self.means[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].copy(),
        )

    def normalize_rotations(self):
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        self.rotations /= norms

    def copy(self):
        return SceneMap(self.means.copy(), self.log_scales.copy(), self.rotations.copy(),
                        self.opacity_logits.copy(), self.colors.copy(),
                        self.generations.copy(), self.epoch)

    def append(self, means, log_scales, rotations, opacity_logits, colors):
        n = len(means)
        self.means = np.concatenate([self.means, means])
        self.log_scales = np.concatenate([self.log_scales, log_scales])
        self.rotations = np.concatenate([self.rotations, rotations])
        self.opacity_logits = np.concatenate([self.opacity_logits, opacity_logits])
        self.colors = np.concatenate([self.colors, colors])
        self.generations = np.concatenate([self.generations,
                                           np.full(n, self.epoch, dtype=np.int64)])
        return n

    def keep(self, mask):
        self.means = self.means[mask]
        self.log_scales = self.log_scales[mask]
        self.rotations = self.rotations[mask]
        self.opacity_logits = self.opacity_logits[mask]
        self.colors = self.colors[mask]
        self.generations = self.generations[mask]


def _default_attributes(n, scale, n_channels):
    return dict(
        log_scales=np.full((n, 3), np.log(scale)),
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        opacity_logits=np.zeros(n),
        colors=np.full((n, n_channels), MID_GRAY_LOG),
    )


def random_init_in_box(box: BoundingBox, count: int, seed, n_channels=1) -> SceneMap:
    """Seed `count` primitives uniformly inside the box, deterministic per seed."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    means = rng.uniform(box.min_corner, box.max_corner, size=(count, 3))
    scale = box.diagonal / count ** (1.0 / 3.0) * 0.5
    attrs = _default_attributes(count, scale, n_channels)
    return SceneMap(means=means, **attrs)


def reinit_from_depth(depth_map, pose: SE3Pose, intr: CameraIntrinsics,
                      stride: int = 1, n_channels=1, color_map=None) -> SceneMap:
    """Rebuild primitive centers by unprojecting a depth map at `pose`.

    `pose` is camera-to-world. Pixels with non-finite or non-positive depth are
    skipped; raises EmptyDepth when nothing remains. Per-primitive scale is the
    stride-sized pixel footprint at its depth. When `color_map` (per-pixel
    log brightness) is given, each primitive keeps its source pixel's color so
    the rebuilt scene starts out looking like the one it replaces; otherwise
    colors reset to mid-gray.
    """
    depth = np.asarray(depth_map, dtype=np.float64)
    grid = intr.pixel_grid(stride=stride)
    d = depth[grid[:, 1], grid[:, 0]]
    valid = np.isfinite(d) & (d > 0.0)
    if not np.any(valid):
        raise EmptyDepth("no valid depth pixel to unproject")
    grid, d = grid[valid], d[valid]
    means = pose.apply(intr.unproject(grid, d))
    scales = d / intr.fx * stride
    attrs = _default_attributes(len(means), 1.0, n_channels)
    attrs["log_scales"] = np.log(scales)[:, None].repeat(3, axis=1)
    if color_map is not None:
        cm = np.asarray(color_map, dtype=np.float64).reshape(intr.height, intr.width, -1)
        attrs["colors"] = cm[grid[:, 1], grid[:, 0], :]
    return SceneMap(means=means, **attrs)


def grow_from_mask(scene: SceneMap, mask, render_depth, pose: SE3Pose,
                   intr: CameraIntrinsics, stride: int = 1,
                   default_depth: float = 1.0) -> int:
    """Add one primitive per masked (stride-subsampled) pixel; returns count added.

    `render_depth` entries <= 0 mark pixels without reliable rendered depth;
    those fall back to `default_depth`. A candidate is skipped when an existing
    primitive already sits within half its footprint of the unprojected point,
    which makes repeated growing from identical inputs a no-op.
    """
    mask = np.asarray(mask, dtype=bool)
    depth = np.asarray(render_depth, dtype=np.float64)
    if mask.shape != depth.shape:
        raise ValueError(f"mask {mask.shape} and depth {depth.shape} differ")
    grid = intr.pixel_grid(stride=stride)
    keep = mask[grid[:, 1], grid[:, 0]]
    grid = grid[keep]
    if len(grid) == 0:
        scene.epoch += 1
        return 0
    d = depth[grid[:, 1], grid[:, 0]]
    d = np.where(np.isfinite(d) & (d > 0.0), d, default_depth)
    means = pose.apply(intr.unproject(grid, d))
    scales = d / intr.fx * stride

    if scene.count > 0:
        diff = means[:, None, :] - scene.means[None, :, :]
        nearest = np.sqrt((diff ** 2).sum(-1)).min(axis=1)
        fresh = nearest > 0.5 * scales
        means, scales = means[fresh], scales[fresh]
    if len(means) == 0:
        scene.epoch += 1
        return 0

    attrs = _default_attributes(len(means), 1.0, scene.n_channels)
    attrs["log_scales"] = np.log(scales)[:, None].repeat(3, axis=1)
    scene.epoch += 1
    return scene.append(means=means, **attrs)


def prune_transparent(scene: SceneMap, opacity_threshold: float) -> int:
    """Remove primitives with opacity below threshold; returns count removed."""
    if not 0.0 < opacity_threshold < 1.0:
        raise ValueError(f"opacity threshold must be in (0, 1), got {opacity_threshold}")
    survivors = scene.opacities() >= opacity_threshold
    removed = int(np.sum(~survivors))
    if removed:
        scene.keep(survivors)
    scene.epoch += 1
    return removed


def save_scene(path, scene: SceneMap):
    """Binary checkpoint: IEGS magic, version, count, then 14 f64 per primitive."""
    colors = scene.colors
    if colors.shape[1] == 1:
        colors = np.repeat(colors, 3, axis=1)
    block = np.concatenate([scene.means, scene.log_scales, scene.rotations,
                            scene.opacity_logits[:, None], colors], axis=1)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, scene.count))
        f.write(block.astype("<f8").tobytes())


def load_scene(path, color_mode="grayscale") -> SceneMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<IQ", f.read(12))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        raw = f.read(count * 14 * 8)
        if len(raw) != count * 14 * 8:
            raise DataError(f"{path}: truncated checkpoint")
    block = np.frombuffer(raw, dtype="<f8").reshape(count, 14).astype(np.float64)
    colors = block[:, 11:14]
    if color_mode == "grayscale":
        colors = colors[:, :1].copy()
    return SceneMap(means=block[:, 0:3].copy(), log_scales=block[:, 3:6].copy(),
                    rotations=block[:, 6:10].copy(), opacity_logits=block[:, 10].copy(),
                    colors=colors)
