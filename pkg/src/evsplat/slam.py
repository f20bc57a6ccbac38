"""Incremental tracking and mapping on event chunks.

The trajectory is a row of pose slots at chunk boundaries; chunk i owns slots
(i, i+1), so consecutive chunks share one boundary parameter. Tracking
optimizes the newest chunk's two slots against the frozen scene; mapping runs
a sliding-window bundle adjustment over scene parameters and all window slots
except the oldest boundary, which anchors the gauge and keeps evicted
segments fixed.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adam import Adam
from .camera import CameraIntrinsics
from .config import RunConfig
from .errors import DataError, EmptyDepth, InsufficientChunks
from .events import (
    BrightnessChangeMap,
    SliceSamplerConfig,
    accumulate_events,
    apply_bayer_mask,
    chunk_stream,
    merge_sparse_chunks,
    sample_slice,
    segment_chunk,
)
from .losses import LossConfig, total_loss
from .render import RenderConfig, render, render_backward, visibility_mask
from .scene import (
    BoundingBox,
    SceneMap,
    grow_from_mask,
    load_scene,
    prune_transparent,
    random_init_in_box,
    reinit_from_depth,
    save_scene,
)
from .se3 import (
    SE3Pose,
    TrajectorySegment,
    Twist,
    interpolate_pose,
    interpolate_pose_jacobian,
    se3_exp,
    se3_log,
    write_tum,
)


class Trajectory:
    """Pose slots at chunk boundaries; slot i+1 ends chunk i and starts chunk i+1."""

    def __init__(self, boundary_times, poses):
        assert len(boundary_times) == len(poses)
        self.times = [float(t) for t in boundary_times]
        self.poses = list(poses)

    @property
    def n_chunks(self):
        return len(self.poses) - 1

    def segment(self, i) -> TrajectorySegment:
        return TrajectorySegment(self.times[i], self.times[i + 1],
                                 self.poses[i], self.poses[i + 1])

    def append_boundary(self, t_end, pose):
        self.times.append(float(t_end))
        self.poses.append(pose)

    def samples(self):
        return list(zip(self.times, self.poses))


class SlidingWindow:
    def __init__(self, n_w):
        self.n_w = n_w
        self.ids = deque()

    def push(self, chunk_id):
        """Append a chunk id; returns the evicted id or None."""
        self.ids.append(chunk_id)
        if len(self.ids) > self.n_w:
            return self.ids.popleft()
        return None

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def _scene_lrs(cfg: RunConfig):
    extent = cfg.scene_extent()
    return {
        "means": cfg.lr_means_scale * extent,
        "log_scales": cfg.lr_log_scales,
        "rotations": cfg.lr_rotations,
        "opacity_logits": cfg.lr_opacity,
        "colors": cfg.lr_colors,
    }


def _scene_params(scene: SceneMap):
    return {"means": scene.means, "log_scales": scene.log_scales,
            "rotations": scene.rotations, "opacity_logits": scene.opacity_logits,
            "colors": scene.colors}


def _clamp_scene(scene: SceneMap, cfg: RunConfig):
    extent = cfg.scene_extent()
    np.clip(scene.log_scales, np.log(1e-4 * extent),
            np.log(cfg.max_scale_factor * extent), out=scene.log_scales)
    scene.normalize_rotations()


def _render_cfg(cfg: RunConfig) -> RenderConfig:
    return RenderConfig(near_plane=cfg.near_plane, sigma_cutoff=cfg.sigma_cutoff,
                        alpha_clamp=cfg.alpha_clamp, cov_floor=cfg.cov_floor,
                        t_min=cfg.t_min)


def _loss_cfg(cfg: RunConfig) -> LossConfig:
    return LossConfig(ssim_weight=cfg.ssim_weight, ssim_range=cfg.ssim_range)


def loss_step(scene, seg, chunk, intr, cfg: RunConfig, rng, scene_grads):
    """One sampled-slice loss evaluation with gradients.

    Returns (loss, grad wrt segment start twist, grad wrt end twist,
    SceneGradients or None).
    """
    sampler = SliceSamplerConfig(cfg.n_seg, cfg.n_low, cfg.n_up)
    rcfg = _render_cfg(cfg)
    n_ch = 1 if cfg.color_mode == "grayscale" else 3
    # clamped draws can come out much shorter than n_low; reject slices whose
    # event count falls below half the (chunk-bounded) target so supervision
    # keeps a usable baseline
    floor = min(cfg.n_low, chunk.count) // 2
    for _ in range(20):
        t_k, t_plus, slice_events = sample_slice(chunk, sampler, rng)
        if len(slice_events) >= floor:
            break
    measured = accumulate_events(slice_events, cfg.contrast, intr.width, intr.height,
                                 n_channels=n_ch)
    pose_k = interpolate_pose(seg, t_k)
    pose_p = interpolate_pose(seg, t_plus)
    out_k, cache_k = render(scene, pose_k, intr, rcfg, return_cache=True)
    out_p, cache_p = render(scene, pose_p, intr, rcfg, return_cache=True)
    synth = out_p.brightness - out_k.brightness
    meas_vals = measured.values
    if cfg.color_mode == "bayer":
        meas_vals = apply_bayer_mask(measured).values
        synth = apply_bayer_mask(BrightnessChangeMap(synth, synth.size)).values
    loss, g_synth = total_loss(meas_vals, synth, _loss_cfg(cfg))
    if cfg.color_mode == "bayer":
        # masked-out channels carry no gradient
        g_synth = apply_bayer_mask(BrightnessChangeMap(g_synth, g_synth.size)).values
    g_k = render_backward(scene, pose_k, intr, grad_brightness=-g_synth,
                          cfg=rcfg, cache=cache_k, scene_grads=scene_grads)
    g_p = render_backward(scene, pose_p, intr, grad_brightness=g_synth,
                          cfg=rcfg, cache=cache_p, scene_grads=scene_grads)
    Js_k, Je_k = interpolate_pose_jacobian(seg, t_k)
    Js_p, Je_p = interpolate_pose_jacobian(seg, t_plus)
    g_start = Js_k.T @ g_k.pose + Js_p.T @ g_p.pose
    g_end = Je_k.T @ g_k.pose + Je_p.T @ g_p.pose
    grads = None
    if scene_grads:
        grads = {"means": g_k.means + g_p.means,
                 "log_scales": g_k.log_scales + g_p.log_scales,
                 "rotations": g_k.rotations + g_p.rotations,
                 "opacity_logits": g_k.opacity_logits + g_p.opacity_logits,
                 "colors": g_k.colors + g_p.colors}
    return loss, g_start, g_end, grads


def track_chunk(scene: SceneMap, chunk, traj: Trajectory, chunk_id: int,
                cfg: RunConfig, intr: CameraIntrinsics, rng):
    """Optimize only the chunk's two boundary poses against the frozen scene."""
    opt = Adam({"start": cfg.pose_lr, "end": cfg.pose_lr})
    last = 0.0
    for _ in range(cfg.track_iters):
        seg = traj.segment(chunk_id)
        loss, g_start, g_end, _ = loss_step(scene, seg, chunk, intr, cfg, rng,
                                            scene_grads=False)
        steps = opt.updates({"start": g_start, "end": g_end})
        traj.poses[chunk_id] = traj.poses[chunk_id].retract(-steps["start"])
        traj.poses[chunk_id + 1] = traj.poses[chunk_id + 1].retract(-steps["end"])
        last = loss
    return last


def map_window(scene: SceneMap, window: SlidingWindow, chunks, traj: Trajectory,
               cfg: RunConfig, intr: CameraIntrinsics, rng):
    """Sliding-window bundle adjustment followed by growing and pruning.

    The oldest window boundary stays fixed (gauge anchor), so segments that
    have left the window never change again.
    """
    ids = list(window)
    # the oldest chunk's two boundary poses stay fixed: one pose anchors the
    # rigid gauge and the second pins the monocular scale, so the window's
    # joint scene+pose optimization cannot random-walk the map scale
    anchored = {ids[0], ids[0] + 1}
    lrs = _scene_lrs(cfg)
    for cid in ids:
        for slot in (cid, cid + 1):
            if slot not in anchored:
                lrs[f"pose_{slot}"] = cfg.pose_lr
    opt = Adam(lrs)
    params = _scene_params(scene)
    last = 0.0
    for _ in range(cfg.map_iters):
        cid = ids[int(rng.integers(0, len(ids)))]
        seg = traj.segment(cid)
        loss, g_start, g_end, grads = loss_step(scene, seg, chunk=chunks[cid],
                                                intr=intr, cfg=cfg, rng=rng,
                                                scene_grads=True)
        pose_grads = {}
        if cid not in anchored:
            pose_grads[f"pose_{cid}"] = g_start
        if cid + 1 not in anchored:
            pose_grads[f"pose_{cid + 1}"] = g_end
        steps = opt.updates({**grads, **pose_grads})
        for name in grads:
            params[name] -= steps[name]
        for slot_name, step in steps.items():
            if slot_name.startswith("pose_"):
                slot = int(slot_name.split("_")[1])
                traj.poses[slot] = traj.poses[slot].retract(-step)
        _clamp_scene(scene, cfg)
        last = loss

    # expand into newly seen regions at the newest chunk's end pose, then prune
    newest_end = traj.poses[ids[-1] + 1]
    out = render(scene, newest_end, intr, _render_cfg(cfg))
    mask = visibility_mask(out, cfg.lambda_v)
    depth_valid = np.where(out.alpha >= cfg.lambda_v,
                           out.normalized_depth(min_alpha=cfg.lambda_v), 0.0)
    box = BoundingBox(np.array(cfg.box_min), np.array(cfg.box_max))
    default_depth = float(np.linalg.norm(box.center - newest_end.translation))
    grown = grow_from_mask(scene, mask, depth_valid, newest_end, intr,
                           stride=cfg.grow_stride, default_depth=default_depth)
    pruned = prune_transparent(scene, cfg.prune_opacity)
    return last, grown, pruned


def initialize_system(chunks, box: BoundingBox, cfg: RunConfig,
                      intr: CameraIntrinsics, rng, scene=None, traj=None):
    """Joint optimization of a random scene and near-identity chunk poses.

    When scene/traj are given (bootstrap re-run) they are optimized in place
    instead of being re-created.
    """
    m = cfg.init_chunks
    usable = [c for c in chunks[:m] if c.count >= cfg.n_seg]
    if len(usable) < m:
        raise InsufficientChunks(f"need {m} chunks with >= {cfg.n_seg} events, "
                                 f"have {len(usable)}")
    n_ch = 1 if cfg.color_mode == "grayscale" else 3
    if scene is None:
        scene = random_init_in_box(box, cfg.init_points, rng, n_channels=n_ch)
    if traj is None:
        times = [usable[0].t_begin] + [c.t_end for c in usable]
        poses = [SE3Pose(np.array([1.0, 0.0, 0.0, 0.0]), rng.uniform(-1e-3, 1e-3, 3))
                 for _ in range(m + 1)]
        traj = Trajectory(times, poses)

    lrs = _scene_lrs(cfg)
    for slot in range(m + 1):
        lrs[f"pose_{slot}"] = cfg.pose_lr
    opt = Adam(lrs)
    params = _scene_params(scene)
    last = 0.0
    for _ in range(cfg.init_iters):
        cid = int(rng.integers(0, m))
        seg = traj.segment(cid)
        loss, g_start, g_end, grads = loss_step(scene, seg, usable[cid], intr, cfg,
                                                rng, scene_grads=True)
        steps = opt.updates({**grads, f"pose_{cid}": g_start, f"pose_{cid + 1}": g_end})
        for name in grads:
            params[name] -= steps[name]
        traj.poses[cid] = traj.poses[cid].retract(-steps[f"pose_{cid}"])
        traj.poses[cid + 1] = traj.poses[cid + 1].retract(-steps[f"pose_{cid + 1}"])
        _clamp_scene(scene, cfg)
        last = loss
    return scene, traj, last


def bootstrap_reinit(scene, traj: Trajectory, chunks, depth_provider,
                     cfg: RunConfig, intr: CameraIntrinsics, rng):
    """Rebuild Gaussian centers from provider depth at the first chunk's end
    pose, then repeat the initialization optimization from the current poses.

    Colors are seeded from the bootstrap render so the rebuilt scene keeps the
    learned appearance; resetting them to gray leaves the metric structure
    textureless while the poses re-converge, which lets the scene drift off
    scale again before it can anchor the trajectory.
    """
    pose_1 = traj.poses[1]
    out = render(scene, pose_1, intr, _render_cfg(cfg))
    depth = depth_provider(pose_1, traj.times[1], out)
    n_ch = 1 if cfg.color_mode == "grayscale" else 3
    new_scene = reinit_from_depth(depth, pose_1, intr, stride=cfg.reinit_stride,
                                  n_channels=n_ch, color_map=out.brightness)

    # pose-only snap: with the scene frozen at its fresh metric structure the
    # init-chunk poses re-converge to that scale before the joint optimization
    # can let the scene chase any leftover pose-scale error from phase one
    m = cfg.init_chunks
    usable = [c for c in chunks[:m] if c.count >= cfg.n_seg]
    snap = Adam({f"pose_{j}": cfg.pose_lr for j in range(m + 1)})
    for _ in range(cfg.init_iters // 3):
        cid = int(rng.integers(0, m))
        seg = traj.segment(cid)
        _, g_start, g_end, _ = loss_step(new_scene, seg, usable[cid], intr, cfg,
                                         rng, scene_grads=False)
        steps = snap.updates({f"pose_{cid}": g_start, f"pose_{cid + 1}": g_end})
        traj.poses[cid] = traj.poses[cid].retract(-steps[f"pose_{cid}"])
        traj.poses[cid + 1] = traj.poses[cid + 1].retract(-steps[f"pose_{cid + 1}"])

    scene, traj, last = initialize_system(chunks, None, cfg, intr, rng,
                                          scene=new_scene, traj=traj)
    return scene, traj, last


def make_depth_provider(name, cfg: RunConfig, manifest=None):
    """Depth sources for bootstrapping: dataset ground truth, constant
    box-center distance, the scene's own render, or None to disable."""
    if name == "none":
        return None
    if name == "constant":
        center = BoundingBox(np.array(cfg.box_min), np.array(cfg.box_max)).center

        def constant_provider(pose, t, out):
            d = float(np.linalg.norm(center - pose.translation))
            return np.full(out.alpha.shape, d)
        return constant_provider
    if name == "self":
        def self_provider(pose, t, out):
            return out.normalized_depth(min_alpha=0.5)
        return self_provider
    if name == "dataset":
        if manifest is None or manifest.path("depth_dir") is None:
            raise DataError("dataset depth provider needs a manifest with depth_dir")
        depth_dir = manifest.path("depth_dir")
        index = []
        for line in (depth_dir / "times.txt").read_text(encoding="utf-8").splitlines():
            if line.strip():
                t_str, fname = line.split()
                index.append((float(t_str), fname))
        if not index:
            raise DataError(f"{depth_dir}/times.txt is empty")
        times = np.array([t for t, _ in index])

        def dataset_provider(pose, t, out):
            from .render import read_raw
            k = int(np.argmin(np.abs(times - t)))
            return read_raw(depth_dir / index[k][1])
        return dataset_provider
    raise DataError(f"unknown depth provider {name!r}")


@dataclass
class SlamResult:
    trajectory: list          # [(t, SE3Pose)] at chunk boundaries
    scene: SceneMap
    logs: list                # per-phase dict rows
    n_chunks: int


def _constant_velocity_seed(traj: Trajectory, chunk_id, t_end):
    """Seed the next boundary by extrapolating the recent motion.

    Uses a constant-acceleration prediction (linear extrapolation of the
    per-second twist) when two previous chunks exist, else constant velocity;
    smoothly rotating motions otherwise leave the tracker a seed error
    comparable to its whole travel budget.
    """
    prev = traj.segment(chunk_id - 1)
    w_prev = se3_log(prev.pose_start.inverse().compose(prev.pose_end)).as_vector() \
        / prev.duration()
    if chunk_id >= 2:
        prev2 = traj.segment(chunk_id - 2)
        w_prev2 = se3_log(prev2.pose_start.inverse().compose(prev2.pose_end)).as_vector() \
            / prev2.duration()
        w_pred = 2.0 * w_prev - w_prev2
    else:
        w_pred = w_prev
    dt = t_end - traj.times[-1]
    traj.append_boundary(t_end, traj.poses[-1].compose(se3_exp(Twist.from_vector(w_pred * dt))))


class _StateIO:
    """Resume snapshots: scene, pose slots, rng state, and the chunk cursor."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.scene_path = self.dir / "state_scene.iegs"
        self.pose_path = self.dir / "state_poses.npy"
        self.meta_path = self.dir / "state_meta.json"

    def exists(self):
        return self.scene_path.exists() and self.pose_path.exists() \
            and self.meta_path.exists()

    def save(self, scene, traj, rng, next_chunk, logs, color_mode):
        save_scene(self.scene_path, scene)
        block = np.array([[t, *p.rotation, *p.translation]
                          for t, p in zip(traj.times, traj.poses)])
        np.save(self.pose_path, block)
        meta = {"next_chunk": next_chunk, "rng_state": rng.bit_generator.state,
                "logs": logs}
        self.meta_path.write_text(json.dumps(meta), encoding="utf-8")

    def load(self, color_mode):
        scene = load_scene(self.scene_path,
                           "grayscale" if color_mode == "grayscale" else "bayer")
        block = np.load(self.pose_path)
        times = block[:, 0].tolist()
        poses = [SE3Pose(row[1:5], row[5:8]) for row in block]
        meta = json.loads(self.meta_path.read_text(encoding="utf-8"))
        rng = np.random.default_rng(0)
        rng.bit_generator.state = meta["rng_state"]
        return scene, Trajectory(times, poses), rng, meta["next_chunk"], meta["logs"]


def run_slam(events, cfg: RunConfig, intr: CameraIntrinsics,
             depth_provider=None, out_dir=None, resume=False,
             progress=None) -> SlamResult:
    """Full pipeline: chunk, initialize, bootstrap, then track/map every chunk.

    Writes trajectory.tum, scene.iegs, chunk_log.csv, and resume snapshots
    into out_dir when given.
    """
    def report(msg):
        if progress:
            progress(msg)

    cfg.validate()
    state_io = _StateIO(out_dir) if out_dir is not None else None
    raw_chunks = chunk_stream(events, cfg.chunk_duration)
    chunks = merge_sparse_chunks(raw_chunks, cfg.n_seg)
    n_merged = len(raw_chunks) - len(chunks)
    if n_merged:
        report(f"merged/dropped {n_merged} sparse chunks ({len(chunks)} remain)")
    if len(chunks) < cfg.init_chunks:
        raise InsufficientChunks(f"stream yields {len(chunks)} usable chunks, "
                                 f"need {cfg.init_chunks}")
    chunks = [segment_chunk(c, cfg.n_seg) for c in chunks]
    m = cfg.init_chunks
    logs = []

    if resume and state_io is not None and state_io.exists():
        scene, traj, rng, start_chunk, logs = state_io.load(cfg.color_mode)
        report(f"resumed at chunk {start_chunk}")
    else:
        rng = np.random.default_rng(cfg.seed)
        # seed the map inside the configured region plus a 20% margin
        box = BoundingBox(np.array(cfg.box_min), np.array(cfg.box_max)).inflated(0.2)
        t0 = time.perf_counter()
        scene, traj, loss = initialize_system(chunks, box, cfg, intr, rng)
        logs.append({"chunk_id": m - 1, "phase": "init", "final_loss": loss,
                     "wall_ms": (time.perf_counter() - t0) * 1e3})
        report(f"init done: loss {loss:.5f}, {scene.count} gaussians")
        if depth_provider is not None:
            t0 = time.perf_counter()
            scene, traj, loss = bootstrap_reinit(scene, traj, chunks, depth_provider,
                                                 cfg, intr, rng)
            logs.append({"chunk_id": m - 1, "phase": "reinit", "final_loss": loss,
                         "wall_ms": (time.perf_counter() - t0) * 1e3})
            report(f"reinit done: loss {loss:.5f}, {scene.count} gaussians")
        start_chunk = m
        if state_io is not None:
            state_io.save(scene, traj, rng, start_chunk, logs, cfg.color_mode)

    window = SlidingWindow(cfg.window_chunks)
    for cid in range(max(0, start_chunk - cfg.window_chunks), start_chunk):
        window.push(cid)

    for cid in range(start_chunk, len(chunks)):
        chunk = chunks[cid]
        _constant_velocity_seed(traj, cid, chunk.t_end)
        t0 = time.perf_counter()
        loss = track_chunk(scene, chunk, traj, cid, cfg, intr, rng)
        logs.append({"chunk_id": cid, "phase": "track", "final_loss": loss,
                     "wall_ms": (time.perf_counter() - t0) * 1e3})
        window.push(cid)
        t0 = time.perf_counter()
        loss, grown, pruned = map_window(scene, window, chunks, traj, cfg, intr, rng)
        logs.append({"chunk_id": cid, "phase": "map", "final_loss": loss,
                     "wall_ms": (time.perf_counter() - t0) * 1e3})
        report(f"chunk {cid + 1}/{len(chunks)}: loss {loss:.5f} "
               f"(+{grown}/-{pruned} gaussians, {scene.count} total)")
        if state_io is not None and ((cid + 1 - m) % cfg.checkpoint_every == 0
                                     or cid == len(chunks) - 1):
            state_io.save(scene, traj, rng, cid + 1, logs, cfg.color_mode)

    result = SlamResult(trajectory=traj.samples(), scene=scene, logs=logs,
                        n_chunks=len(chunks))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_tum(out / "trajectory.tum", result.trajectory)
        save_scene(out / "scene.iegs", scene)
        with open(out / "chunk_log.csv", "w", encoding="utf-8") as f:
            f.write("chunk_id,phase,final_loss,wall_ms\n")
            for row in logs:
                f.write("%d,%s,%.9g,%.3f\n" % (row["chunk_id"], row["phase"],
                                               row["final_loss"], row["wall_ms"]))
    return result
