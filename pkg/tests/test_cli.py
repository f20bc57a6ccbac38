import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from evsplat.cli import main
from evsplat.config import ENV_PREFIX, load_config, load_manifest, parse_kv_file
from evsplat.errors import ConfigError
from evsplat.events import read_events
from evsplat.render import read_raw
from evsplat.se3 import read_tum


SIM_ARGS = ["--set", "sim_width=20", "--set", "sim_height=20", "--set", "sim_fx=14",
            "--set", "sim_fy=14", "--set", "sim_points=120", "--set", "sim_duration=0.6",
            "--set", "sim_frame_rate=100", "--set", "contrast=0.05",
            "--set", "box_min=-0.9,-0.9,0.9", "--set", "box_max=0.9,0.9,2.2"]

SLAM_ARGS = ["--set", "n_seg=30", "--set", "n_low=60", "--set", "n_up=140",
             "--set", "chunk_duration=0.1", "--set", "init_chunks=2",
             "--set", "init_iters=120", "--set", "track_iters=25",
             "--set", "map_iters=40", "--set", "init_points=100",
             "--set", "depth_provider=constant"]


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    rc = main(["simulate", "--out", str(out)] + SIM_ARGS)
    assert rc == 0
    return out


class TestConfig:
    def test_defaults_validate(self):
        load_config()

    def test_file_env_override_precedence(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("n_seg = 50\nseed = 3  # comment\n", encoding="utf-8")
        cfg = load_config(cfg_file, env={}, overrides=[])
        assert cfg.n_seg == 50 and cfg.seed == 3
        cfg = load_config(cfg_file, env={ENV_PREFIX + "N_SEG": "60"}, overrides=[])
        assert cfg.n_seg == 60
        cfg = load_config(cfg_file, env={ENV_PREFIX + "N_SEG": "60"},
                          overrides=["n_seg=70"])
        assert cfg.n_seg == 70

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("not_a_key = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(cfg_file)

    def test_invalid_value_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["ssim_weight=1.5"])


class TestSimulateCommand:
    def test_manifest_reloads(self, cli_dataset):
        manifest = load_manifest(cli_dataset / "manifest.txt").validate()
        assert manifest.contrast == pytest.approx(0.05)
        ev, w, h = read_events(manifest.path("events"))
        assert (w, h) == (20, 20)
        assert len(ev) > 500

    def test_deterministic_events(self, cli_dataset, tmp_path):
        rc = main(["simulate", "--out", str(tmp_path / "again")] + SIM_ARGS)
        assert rc == 0
        a = (cli_dataset / "events.bin").read_bytes()
        b = (tmp_path / "again" / "events.bin").read_bytes()
        assert a == b

    def test_zero_duration_is_config_error(self, tmp_path):
        rc = main(["simulate", "--out", str(tmp_path / "x"),
                   "--set", "sim_duration=0"])
        assert rc == 1


class TestSlamCommand:
    def test_outputs_present(self, cli_dataset, tmp_path):
        out = tmp_path / "run"
        rc = main(["slam", "--manifest", str(cli_dataset / "manifest.txt"),
                   "--out", str(out), "--quiet"] + SIM_ARGS[-4:] + SLAM_ARGS)
        assert rc == 0
        traj = read_tum(out / "trajectory.tum")
        assert len(traj) >= 3
        log = (out / "chunk_log.csv").read_text().splitlines()
        assert log[0] == "chunk_id,phase,final_loss,wall_ms"
        assert (out / "scene.iegs").exists()

    def test_missing_events_file(self, cli_dataset, tmp_path):
        broken = tmp_path / "broken"
        shutil.copytree(cli_dataset, broken)
        (broken / "events.bin").unlink()
        rc = main(["slam", "--manifest", str(broken / "manifest.txt"),
                   "--out", str(tmp_path / "run")])
        assert rc == 2


class TestRenderCommand:
    def test_gt_checkpoint_matches_simulator_frame(self, cli_dataset, tmp_path):
        # rendering the exported ground-truth scene at a ground-truth pose
        # reproduces the simulator frame
        manifest = load_manifest(cli_dataset / "manifest.txt").validate()
        gt = read_tum(manifest.path("trajectory"))
        t, pose = gt[3]
        w, x, y, z = pose.rotation
        pose_arg = "%.9f %.17g %.17g %.17g %.17g %.17g %.17g %.17g" % (
            t, *pose.translation, x, y, z, w)
        out = tmp_path / "views"
        rc = main(["render", "--checkpoint", str(cli_dataset / "gt_scene.iegs"),
                   "--manifest", str(cli_dataset / "manifest.txt"),
                   "--pose", pose_arg, "--out", str(out), "--raw"])
        assert rc == 0
        img = read_raw(out / "view_0000.ief")

        from evsplat.render import render
        from evsplat.scene import load_scene
        scene = load_scene(cli_dataset / "gt_scene.iegs")
        expected = np.exp(render(scene, pose, manifest.intrinsics()).brightness)
        assert np.abs(img - expected).max() < 1e-6

    def test_empty_pose_list(self, cli_dataset, tmp_path):
        rc = main(["render", "--checkpoint", str(cli_dataset / "gt_scene.iegs"),
                   "--manifest", str(cli_dataset / "manifest.txt"),
                   "--out", str(tmp_path / "none")])
        assert rc == 0
        assert list((tmp_path / "none").glob("*.pgm")) == []

    def test_malformed_checkpoint(self, cli_dataset, tmp_path):
        bad = tmp_path / "bad.iegs"
        bad.write_bytes(b"XXXX" + bytes(64))
        rc = main(["render", "--checkpoint", str(bad),
                   "--manifest", str(cli_dataset / "manifest.txt"),
                   "--out", str(tmp_path / "v")])
        assert rc == 2


class TestEvalCommand:
    def test_self_ate_zero(self, cli_dataset, tmp_path, capsys):
        gt = cli_dataset / "gt_trajectory.tum"
        report = tmp_path / "metrics.txt"
        rc = main(["eval", "--est", str(gt), "--gt", str(gt), "--out", str(report)])
        assert rc == 0
        vals = parse_kv_file(report)
        assert float(vals["ate_rmse_sim3"]) < 1e-9
        assert float(vals["ate_rmse_se3"]) < 1e-9

    def test_image_metrics_self(self, cli_dataset, tmp_path):
        views = tmp_path / "imgs"
        views.mkdir()
        rng = np.random.default_rng(0)
        from evsplat.render import write_raw
        for k in range(3):
            write_raw(views / f"v_{k}.ief", rng.uniform(0, 1, (20, 20)).astype(np.float32))
        report = tmp_path / "m.txt"
        gt = cli_dataset / "gt_trajectory.tum"
        rc = main(["eval", "--est", str(gt), "--gt", str(gt),
                   "--pred-dir", str(views), "--gt-dir", str(views),
                   "--out", str(report)])
        assert rc == 0
        vals = parse_kv_file(report)
        assert float(vals["ssim_mean"]) == pytest.approx(1.0)
        assert vals["psnr_mean"] == "inf"

    def test_error_file(self, cli_dataset, tmp_path):
        gt = cli_dataset / "gt_trajectory.tum"
        err_file = tmp_path / "err.txt"
        rc = main(["eval", "--est", str(gt), "--gt", str(gt),
                   "--error-file", str(err_file)])
        assert rc == 0
        lines = err_file.read_text().strip().splitlines()
        assert len(lines) >= 3
        t, e = lines[0].split()
        assert float(e) < 1e-9


class TestEnvOverride:
    def test_env_var_reaches_config(self, cli_dataset, tmp_path):
        env = dict(os.environ)
        env[ENV_PREFIX + "SIM_DURATION"] = "0"
        proc = subprocess.run(
            [sys.executable, "-m", "evsplat", "simulate", "--out", str(tmp_path / "x")],
            env=env, capture_output=True, text=True)
        assert proc.returncode == 1
        assert "config error" in proc.stderr
