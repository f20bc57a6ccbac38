"""Ground-truth generator: renders a known Gaussian scene along a known
trajectory and converts the log-intensity signal into events by threshold
crossing, closing the verification loop with perfect ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics
from .config import DatasetManifest, save_manifest
from .errors import OutOfSegment
from .events import make_events, write_events
from .kernels import active as _backend
from .render import RenderConfig, render, write_raw
from .scene import BoundingBox, SceneMap, save_scene
from .se3 import SE3Pose, TrajectorySegment, interpolate_pose, matrix_to_quat, write_tum


@dataclass(frozen=True)
class EventGenConfig:
    contrast: float = 0.1
    frame_rate: float = 200.0
    refractory: float = 0.0

    def __post_init__(self):
        if self.contrast <= 0 or self.frame_rate <= 0:
            raise ValueError("contrast and frame rate must be positive")


@dataclass
class GroundTruthWorld:
    scene: SceneMap
    segments: list  # contiguous TrajectorySegments covering [t0, t_total]
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        for a, b in zip(self.segments, self.segments[1:]):
            if abs(a.t_end - b.t_start) > 1e-12:
                raise ValueError("trajectory segments must tile time contiguously")

    @property
    def t_begin(self):
        return self.segments[0].t_start

    @property
    def t_end(self):
        return self.segments[-1].t_end

    def pose_at(self, t: float) -> SE3Pose:
        starts = [s.t_start for s in self.segments]
        k = int(np.searchsorted(starts, t, side="right")) - 1
        k = min(max(k, 0), len(self.segments) - 1)
        try:
            return interpolate_pose(self.segments[k], t)
        except OutOfSegment:
            raise OutOfSegment(f"time {t} outside trajectory "
                               f"[{self.t_begin}, {self.t_end}]")


def make_box_scene(box: BoundingBox, count: int, rng, n_channels=1) -> SceneMap:
    """Textured random ground-truth scene: mostly opaque, varied blob sizes."""
    means = rng.uniform(box.min_corner, box.max_corner, size=(count, 3))
    base = box.diagonal / count ** (1.0 / 3.0)
    log_scales = np.log(base * rng.uniform(0.10, 0.35, (count, 1))) \
        + rng.uniform(-0.3, 0.3, (count, 3))
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return SceneMap(
        means=means,
        log_scales=log_scales,
        rotations=quats,
        opacity_logits=rng.uniform(1.5, 3.5, count),
        colors=rng.uniform(np.log(0.15), np.log(0.95), (count, n_channels)),
    )


def _look_at(position, target):
    z = np.asarray(target, dtype=np.float64) - position
    z /= np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    return SE3Pose(matrix_to_quat(R), position)


def _segments_from_waypoints(times, poses):
    return [TrajectorySegment(times[i], times[i + 1], poses[i], poses[i + 1])
            for i in range(len(times) - 1)]


def make_lateral_sweep(duration, amplitude, cycles=1.0, waypoint_hz=100.0):
    """Constant-speed circular sweep in the fronto-parallel plane.

    The camera translates around a circle of diameter `amplitude` while
    keeping its orientation fixed (+z view). Constant speed avoids the
    unobservable near-zero-motion chunks that a sinusoidal back-and-forth
    sweep produces around its turning points.
    """
    n = max(2, int(round(duration * waypoint_hz)) + 1)
    times = np.linspace(0.0, duration, n)
    phase = 2.0 * np.pi * cycles * times / duration
    r = 0.5 * amplitude
    poses = [SE3Pose(np.array([1.0, 0.0, 0.0, 0.0]),
                     np.array([r * np.sin(p), r * (np.cos(p) - 1.0), 0.0]))
             for p in phase]
    return _segments_from_waypoints(times, poses)


def make_orbit(duration, center, radius, arc=0.6, waypoint_hz=100.0):
    """Camera arc around `center` at `radius`, always looking at the center."""
    n = max(2, int(round(duration * waypoint_hz)) + 1)
    times = np.linspace(0.0, duration, n)
    center = np.asarray(center, dtype=np.float64)
    angles = arc * np.sin(2.0 * np.pi * times / duration)
    poses = []
    for a in angles:
        pos = center + radius * np.array([np.sin(a), 0.0, -np.cos(a)])
        poses.append(_look_at(pos, center))
    return _segments_from_waypoints(times, poses)


def render_frame_sequence(world: GroundTruthWorld, rate: float,
                          render_cfg: RenderConfig = RenderConfig(),
                          with_depth=False):
    """Log-brightness frames at uniform timestamps along the trajectory."""
    if rate <= 0:
        raise ValueError(f"frame rate must be positive, got {rate}")
    duration = world.t_end - world.t_begin
    n = int(np.floor(rate * duration)) + 1
    times = world.t_begin + np.arange(n) / rate
    frames = np.empty((n, world.intrinsics.height, world.intrinsics.width))
    depths = np.empty_like(frames) if with_depth else None
    for k, t in enumerate(times):
        out = render(world.scene, world.pose_at(float(t)), world.intrinsics, render_cfg)
        frames[k] = out.brightness
        if with_depth:
            depths[k] = out.normalized_depth(min_alpha=0.5)
    if with_depth:
        return times, frames, depths
    return times, frames


def generate_events(times, frames, cfg: EventGenConfig):
    """Events from the log-intensity signal, globally sorted by (t, v, u)."""
    if len(frames) < 2:
        raise ValueError("need at least 2 frames to generate events")
    ts, us, vs, ps = _backend.events_from_frames(
        np.ascontiguousarray(times, dtype=np.float64),
        np.ascontiguousarray(frames, dtype=np.float64),
        cfg.contrast, cfg.refractory)
    order = np.lexsort((us, vs, ts))
    return make_events(ts[order], us[order], vs[order], ps[order])


def export_dataset(world: GroundTruthWorld, events, out_dir, cfg: EventGenConfig,
                   depth_every: int = 5) -> DatasetManifest:
    """Write events, ground truth, intrinsics, and depth maps for one dataset.

    Layout: manifest.txt, events.bin, gt_trajectory.tum, gt_scene.iegs and a
    depth/ directory ('frame_<k>.ief' float32 raw plus times.txt).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    intr = world.intrinsics
    write_events(out / "events.bin", events, intr.width, intr.height)
    save_scene(out / "gt_scene.iegs", world.scene)

    traj_rate = min(1000.0, cfg.frame_rate)
    duration = world.t_end - world.t_begin
    n = int(np.floor(traj_rate * duration)) + 1
    samples = [(world.t_begin + k / traj_rate,
                world.pose_at(world.t_begin + k / traj_rate)) for k in range(n)]
    write_tum(out / "gt_trajectory.tum", samples)

    depth_dir = out / "depth"
    depth_dir.mkdir(exist_ok=True)
    times, _, depths = render_frame_sequence(world, cfg.frame_rate, with_depth=True)
    lines = []
    for k in range(0, len(times), depth_every):
        name = f"frame_{k:06d}.ief"
        write_raw(depth_dir / name, depths[k].astype(np.float32))
        lines.append(f"{times[k]:.9f} {name}")
    (depth_dir / "times.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    manifest = DatasetManifest(
        events="events.bin", trajectory="gt_trajectory.tum", gt_scene="gt_scene.iegs",
        depth_dir="depth", fx=intr.fx, fy=intr.fy, cx=intr.cx, cy=intr.cy,
        width=intr.width, height=intr.height, contrast=cfg.contrast, root=out)
    save_manifest(out / "manifest.txt", manifest)
    return manifest


def build_world_from_config(cfg) -> GroundTruthWorld:
    """Construct the ground-truth world a RunConfig describes."""
    rng = np.random.default_rng(cfg.seed)
    box = BoundingBox(np.array(cfg.box_min), np.array(cfg.box_max))
    n_channels = 1 if cfg.color_mode == "grayscale" else 3
    scene = make_box_scene(box, cfg.sim_points, rng, n_channels=n_channels)
    intr = CameraIntrinsics(fx=cfg.sim_fx, fy=cfg.sim_fy,
                            cx=cfg.sim_width / 2.0, cy=cfg.sim_height / 2.0,
                            width=cfg.sim_width, height=cfg.sim_height)
    if cfg.sim_trajectory == "lateral_sweep":
        segments = make_lateral_sweep(cfg.sim_duration, cfg.sim_amplitude, cfg.sim_cycles)
    elif cfg.sim_trajectory == "orbit":
        segments = make_orbit(cfg.sim_duration, box.center,
                              float(np.linalg.norm(box.center)), arc=cfg.sim_amplitude)
    else:
        raise ValueError(f"unknown trajectory type {cfg.sim_trajectory!r}")
    return GroundTruthWorld(scene=scene, segments=segments, intrinsics=intr)
