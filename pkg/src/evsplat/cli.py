"""Command-line surface: simulate | slam | render | eval.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
invariant violation. Every config key can also be set via EVSPLAT_<KEY>.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    DatasetManifest,
    config_to_mapping,
    load_config,
    load_manifest,
    write_kv_file,
)
from .errors import ConfigError, DataError, EvsplatError
from .events import read_events
from .metrics import TrajectoryEstimate, ate_rmse, linear_color_transform, psnr, ssim_metric
from .render import RenderConfig, read_raw, render, write_pgm, write_raw
from .scene import load_scene
from .se3 import read_tum
from .simulator import (
    EventGenConfig,
    build_world_from_config,
    export_dataset,
    generate_events,
    render_frame_sequence,
)
from .slam import make_depth_provider, run_slam

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")


def _build_parser():
    p = argparse.ArgumentParser(prog="evsplat",
                                description="incremental event-camera gaussian "
                                            "splatting SLAM, desk scale")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic event dataset")
    _add_config_args(sim)
    sim.add_argument("--out", required=True, help="output dataset directory")

    slam = sub.add_parser("slam", help="run tracking and mapping on a dataset")
    _add_config_args(slam)
    slam.add_argument("--manifest", required=True, help="dataset manifest file")
    slam.add_argument("--out", required=True, help="output directory")
    slam.add_argument("--resume", action="store_true",
                      help="continue from the last state snapshot in --out")
    slam.add_argument("--quiet", action="store_true")
    slam.add_argument("--threads", type=int, default=None,
                      help="kernel thread budget (current kernels are serial; "
                           "reserved for tiled backends)")

    ren = sub.add_parser("render", help="render novel views from a checkpoint")
    _add_config_args(ren)
    ren.add_argument("--checkpoint", required=True, help="scene checkpoint (.iegs)")
    ren.add_argument("--manifest", help="dataset manifest supplying intrinsics")
    ren.add_argument("--trajectory", help="TUM file of poses to render")
    ren.add_argument("--pose", action="append", default=[],
                     metavar="T TX TY TZ QX QY QZ QW",
                     help="single pose sample (repeatable)")
    ren.add_argument("--out", required=True)
    ren.add_argument("--raw", action="store_true", help="also write raw float32 images")
    ren.add_argument("--normalize", action="store_true",
                     help="min-max normalize PGM output")

    ev = sub.add_parser("eval", help="trajectory and image metrics")
    ev.add_argument("--est", required=True, help="estimated trajectory (TUM)")
    ev.add_argument("--gt", required=True, help="ground-truth trajectory (TUM)")
    ev.add_argument("--pred-dir", help="directory of predicted raw float images")
    ev.add_argument("--gt-dir", help="directory of reference raw float images")
    ev.add_argument("--out", help="metrics report file")
    ev.add_argument("--error-file", help="per-pose translation error file")
    return p


def cmd_simulate(args):
    cfg = load_config(args.config, overrides=args.set)
    world = build_world_from_config(cfg)
    gen = EventGenConfig(contrast=cfg.contrast, frame_rate=cfg.sim_frame_rate,
                         refractory=cfg.sim_refractory)
    times, frames = render_frame_sequence(world, gen.frame_rate)
    events = generate_events(times, frames, gen)
    manifest = export_dataset(world, events, args.out, gen,
                              depth_every=cfg.sim_depth_every)
    cfg_map = config_to_mapping(cfg)
    write_kv_file(Path(args.out) / "sim_config.txt", cfg_map)
    print(f"wrote {len(events)} events over {cfg.sim_duration}s to {args.out}")
    return EXIT_OK


def cmd_slam(args):
    cfg = load_config(args.config, overrides=args.set)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = __import__("dataclasses").replace(cfg, threads=args.threads)
    manifest = load_manifest(args.manifest).validate()
    cfg = __import__("dataclasses").replace(cfg, contrast=manifest.contrast)
    intr = manifest.intrinsics()
    events, width, height = read_events(manifest.path("events"))
    if (width, height) != (intr.width, intr.height):
        raise DataError(f"event file is {width}x{height} but manifest says "
                        f"{intr.width}x{intr.height}")
    provider = None
    if cfg.depth_provider != "none":
        provider = make_depth_provider(cfg.depth_provider, cfg, manifest)
    progress = None if args.quiet else lambda msg: print(msg, flush=True)
    result = run_slam(events, cfg, intr, depth_provider=provider,
                      out_dir=args.out, resume=args.resume, progress=progress)
    print(f"processed {result.n_chunks} chunks, "
          f"{result.scene.count} gaussians -> {args.out}")
    return EXIT_OK


def _parse_pose_arg(text):
    from .se3 import SE3Pose
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != 8:
        raise ConfigError(f"--pose needs 8 numbers 't tx ty tz qx qy qz qw', got {text!r}")
    t, tx, ty, tz, qx, qy, qz, qw = vals
    return t, SE3Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))


def cmd_render(args):
    cfg = load_config(args.config, overrides=args.set)
    scene = load_scene(args.checkpoint,
                       color_mode="grayscale" if cfg.color_mode == "grayscale" else "bayer")
    if args.manifest:
        intr = load_manifest(args.manifest).intrinsics()
    else:
        from .camera import CameraIntrinsics
        intr = CameraIntrinsics(cfg.sim_fx, cfg.sim_fy, cfg.sim_width / 2.0,
                                cfg.sim_height / 2.0, cfg.sim_width, cfg.sim_height)
    samples = []
    if args.trajectory:
        samples.extend(read_tum(args.trajectory))
    for text in args.pose:
        samples.append(_parse_pose_arg(text))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rcfg = RenderConfig(near_plane=cfg.near_plane, sigma_cutoff=cfg.sigma_cutoff,
                        alpha_clamp=cfg.alpha_clamp, cov_floor=cfg.cov_floor,
                        t_min=cfg.t_min)
    for k, (t, pose) in enumerate(samples):
        img = render(scene, pose, intr, rcfg).brightness
        linear = np.exp(img)
        write_pgm(out / f"view_{k:04d}.pgm", linear, normalize=args.normalize)
        if args.raw:
            write_raw(out / f"view_{k:04d}.ief", linear.astype(np.float32))
    print(f"rendered {len(samples)} views to {out}")
    return EXIT_OK


def _load_image_dir(path):
    files = sorted(Path(path).glob("*.ief"))
    if not files:
        raise DataError(f"no .ief raw images in {path}")
    return [read_raw(f) for f in files]


def cmd_eval(args):
    est = TrajectoryEstimate.from_samples(read_tum(args.est))
    gt = TrajectoryEstimate.from_samples(read_tum(args.gt))
    sim3 = ate_rmse(est, gt, align_scale=True)
    se3_only = ate_rmse(est, gt, align_scale=False)
    lines = [
        f"ate_rmse_sim3 = {sim3.rmse:.9g}",
        f"ate_rmse_se3 = {se3_only.rmse:.9g}",
        f"ate_matches = {sim3.n_matches}",
        f"ate_scale = {sim3.scale:.9g}",
    ]
    if args.pred_dir and args.gt_dir:
        preds = _load_image_dir(args.pred_dir)
        gts = _load_image_dir(args.gt_dir)
        if len(preds) != len(gts):
            raise DataError(f"{len(preds)} predicted vs {len(gts)} reference images")
        psnrs, ssims = [], []
        for p_img, g_img in zip(preds, gts):
            fit = linear_color_transform(p_img, g_img)
            r = psnr(fit.transformed, g_img, peak=1.0)
            psnrs.append(r.db if not r.identical else float("inf"))
            ssims.append(ssim_metric(fit.transformed, g_img, peak=1.0))
        lines.append(f"psnr_mean = {np.mean(psnrs):.9g}")
        lines.append(f"ssim_mean = {np.mean(ssims):.9g}")
        lines.append(f"image_pairs = {len(preds)}")
    report = "\n".join(lines)
    print(report)
    if args.out:
        Path(args.out).write_text(report + "\n", encoding="utf-8")
    if args.error_file:
        pairs = []
        aligned = sim3.aligned
        for i, t in enumerate(aligned.times):
            j = int(np.argmin(np.abs(gt.times - t)))
            err = np.linalg.norm(aligned.positions[i] - gt.positions[j])
            pairs.append(f"{t:.6f} {err:.9g}")
        Path(args.error_file).write_text("\n".join(pairs) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"simulate": cmd_simulate, "slam": cmd_slam,
                "render": cmd_render, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except EvsplatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - surface invariant violations as exit 3
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
