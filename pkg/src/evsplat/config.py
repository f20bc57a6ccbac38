"""Run configuration and dataset manifests.

Both use the same flat ``key = value`` text format (UTF-8, ``#`` comments).
Precedence for run configs: built-in defaults < config file < environment
variables (EVSPLAT_<KEY>) < CLI ``--set key=value`` overrides.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

ENV_PREFIX = "EVSPLAT_"


@dataclass
class RunConfig:
    # event processing
    chunk_duration: float = 0.05
    n_seg: int = 100
    n_low: int = 1500
    n_up: int = 3000
    contrast: float = 0.1
    # losses
    ssim_weight: float = 0.05       # lambda
    ssim_range_factor: float = 20.0  # ssim dynamic half-range = factor * contrast
    # schedule
    init_chunks: int = 3            # m
    init_iters: int = 4500
    track_iters: int = 200
    map_iters: int = 1500
    window_chunks: int = 20         # n_w
    # learning rates (means lr is scaled by the scene extent)
    pose_lr: float = 1e-4
    lr_means_scale: float = 1.6e-4
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity: float = 5e-2
    lr_colors: float = 2.5e-3
    # scene management
    init_points: int = 800
    lambda_v: float = 0.8
    prune_opacity: float = 0.005
    grow_stride: int = 4
    reinit_stride: int = 2
    max_scale_factor: float = 0.08  # log-scale clamp as a fraction of scene extent
    depth_provider: str = "dataset"  # dataset | constant | none
    # initialization box (world units)
    box_min: tuple = (-1.0, -1.0, 0.9)
    box_max: tuple = (1.0, 1.0, 2.1)
    # rendering
    near_plane: float = 0.01
    sigma_cutoff: float = 3.0
    alpha_clamp: float = 0.999
    cov_floor: float = 0.3
    t_min: float = 1e-4
    # run control
    seed: int = 0
    deterministic: bool = True
    color_mode: str = "grayscale"   # grayscale | bayer
    threads: int = 1
    checkpoint_every: int = 10      # chunks between resume-state snapshots
    # simulator
    sim_width: int = 64
    sim_height: int = 64
    sim_fx: float = 45.0
    sim_fy: float = 45.0
    sim_points: int = 500
    sim_frame_rate: float = 200.0
    sim_duration: float = 5.0
    sim_trajectory: str = "lateral_sweep"  # lateral_sweep | orbit
    sim_amplitude: float = 0.5
    sim_cycles: float = 3.0
    sim_refractory: float = 0.0
    sim_depth_every: int = 5

    @property
    def ssim_range(self):
        return self.ssim_range_factor * self.contrast

    def scene_extent(self):
        return float(np.linalg.norm(np.array(self.box_max) - np.array(self.box_min)))

    def validate(self):
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ConfigError(f"ssim_weight must be in [0, 1], got {self.ssim_weight}")
        if not 0.0 < self.lambda_v < 1.0:
            raise ConfigError(f"lambda_v must be in (0, 1), got {self.lambda_v}")
        if not 0.0 < self.prune_opacity < 1.0:
            raise ConfigError(f"prune_opacity must be in (0, 1), got {self.prune_opacity}")
        if self.chunk_duration <= 0:
            raise ConfigError("chunk_duration must be positive")
        if not 0 < self.n_low <= self.n_up:
            raise ConfigError(f"need 0 < n_low <= n_up, got {self.n_low}, {self.n_up}")
        for name in ("n_seg", "init_chunks", "init_iters", "track_iters", "map_iters",
                     "window_chunks", "init_points", "grow_stride", "threads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.depth_provider not in ("dataset", "constant", "none", "self"):
            raise ConfigError(f"unknown depth_provider {self.depth_provider!r}")
        if self.color_mode not in ("grayscale", "bayer"):
            raise ConfigError(f"unknown color_mode {self.color_mode!r}")
        if self.sim_duration <= 0:
            raise ConfigError("sim_duration must be positive")
        if not np.all(np.array(self.box_min) < np.array(self.box_max)):
            raise ConfigError("box_min must be componentwise below box_max")
        return self


def _parse_value(name, text, current):
    text = text.strip()
    if isinstance(current, bool):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(float(v) for v in text.split(","))
    return text


def parse_kv_file(path):
    """Parse a flat key=value text file into a string dict."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_kv_file(path, mapping):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in mapping.items():
            if isinstance(value, float):
                f.write(f"{key} = {value!r}\n")
            elif isinstance(value, tuple):
                f.write(f"{key} = {','.join(repr(float(v)) for v in value)}\n")
            else:
                f.write(f"{key} = {value}\n")


def load_config(path=None, env=None, overrides=None) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, the environment,
    and CLI overrides, in increasing precedence."""
    cfg = RunConfig()
    values = {}
    if path is not None:
        values.update(parse_kv_file(path))
    env = os.environ if env is None else env
    known = {f.name for f in fields(RunConfig)}
    for name in known:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = env[env_key]
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    updates = {}
    for key, text in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _parse_value(key, text, getattr(cfg, key))
    return replace(cfg, **updates).validate()


def config_to_mapping(cfg: RunConfig):
    return {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}


@dataclass
class DatasetManifest:
    """Paths and camera constants describing one event dataset on disk."""

    events: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    contrast: float
    trajectory: str = None
    gt_scene: str = None
    depth_dir: str = None
    root: Path = field(default=None, repr=False)

    def path(self, name):
        rel = getattr(self, name)
        if rel is None:
            return None
        return Path(rel) if self.root is None else self.root / rel

    def intrinsics(self):
        from .camera import CameraIntrinsics
        return CameraIntrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                                width=self.width, height=self.height)

    def validate(self):
        p = self.path("events")
        if p is None or not p.exists():
            raise DataError(f"manifest events file missing: {p}")
        for name in ("trajectory", "gt_scene"):
            p = self.path(name)
            if p is not None and not p.exists():
                raise DataError(f"manifest {name} file missing: {p}")
        p = self.path("depth_dir")
        if p is not None and not p.is_dir():
            raise DataError(f"manifest depth_dir missing: {p}")
        return self


def save_manifest(path, manifest: DatasetManifest):
    mapping = {}
    for name in ("events", "trajectory", "gt_scene", "depth_dir"):
        if getattr(manifest, name) is not None:
            mapping[name] = getattr(manifest, name)
    for name in ("fx", "fy", "cx", "cy"):
        mapping[name] = float(getattr(manifest, name))
    mapping["width"] = manifest.width
    mapping["height"] = manifest.height
    mapping["contrast"] = float(manifest.contrast)
    write_kv_file(path, mapping)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = parse_kv_file(path)
    except (OSError, ConfigError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    try:
        return DatasetManifest(
            events=raw["events"],
            fx=float(raw["fx"]), fy=float(raw["fy"]),
            cx=float(raw["cx"]), cy=float(raw["cy"]),
            width=int(raw["width"]), height=int(raw["height"]),
            contrast=float(raw["contrast"]),
            trajectory=raw.get("trajectory"),
            gt_scene=raw.get("gt_scene"),
            depth_dir=raw.get("depth_dir"),
            root=path.parent,
        )
    except KeyError as e:
        raise DataError(f"manifest {path} missing key {e}") from e
