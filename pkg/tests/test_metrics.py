import numpy as np
import pytest

from evsplat.errors import TooFewMatches
from evsplat.metrics import (
    TrajectoryEstimate,
    ate_rmse,
    linear_color_transform,
    psnr,
    ssim_metric,
    umeyama_alignment,
)
from evsplat.se3 import SE3Pose, Twist, se3_exp


def random_trajectory(rng, n=40, dt=0.05):
    times = dt * np.arange(n)
    poses = []
    p = SE3Pose.identity()
    for _ in range(n):
        p = p.compose(se3_exp(Twist(0.02 * rng.normal(size=3), 0.05 * rng.normal(size=3))))
        poses.append(p)
    return TrajectoryEstimate(times=times, poses=poses)


def transform_trajectory(traj, s, R, t):
    poses = []
    from evsplat.se3 import matrix_to_quat
    qR = matrix_to_quat(R)
    for p in traj.poses:
        pos = s * R @ p.translation + t
        rot = SE3Pose(qR, np.zeros(3)).compose(p)
        poses.append(SE3Pose(rot.rotation, pos))
    return TrajectoryEstimate(times=traj.times.copy(), poses=poses)


class TestLinearColorTransform:
    def test_identity_fit(self, rng):
        g = rng.uniform(0, 1, (12, 12))
        fit = linear_color_transform(g.copy(), g)
        assert fit.gain[0] == pytest.approx(1.0, abs=1e-12)
        assert fit.offset[0] == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(fit.transformed, g, atol=1e-12)

    def test_affine_inverse_recovered(self, rng):
        g = rng.uniform(0, 1, (10, 10))
        pred = 2.0 * g + 0.1
        fit = linear_color_transform(pred, g)
        assert fit.gain[0] == pytest.approx(0.5, abs=1e-9)
        assert fit.offset[0] == pytest.approx(-0.05, abs=1e-9)
        assert np.allclose(fit.transformed, g, atol=1e-9)

    def test_never_increases_mse(self, rng):
        for _ in range(10):
            g = rng.uniform(0, 1, (9, 9))
            pred = rng.uniform(0.5, 2.0) * g + rng.uniform(-0.3, 0.3) \
                + 0.05 * rng.normal(size=(9, 9))
            before = ((pred - g) ** 2).mean()
            after = ((linear_color_transform(pred, g).transformed - g) ** 2).mean()
            assert after <= before + 1e-12

    def test_degenerate_constant_pred(self, rng):
        g = rng.uniform(0, 1, (8, 8))
        fit = linear_color_transform(np.full((8, 8), 0.7), g)
        assert fit.degenerate
        assert np.allclose(fit.transformed, g.mean())


class TestPsnr:
    def test_identical_flagged(self, rng):
        img = rng.uniform(0, 1, (8, 8))
        r = psnr(img, img.copy())
        assert r.identical and np.isinf(r.db)

    def test_zero_db_at_peak_mse(self):
        a = np.zeros((4, 4))
        b = np.ones((4, 4))
        assert psnr(a, b, peak=1.0).db == pytest.approx(0.0)

    def test_uniform_error_closed_form(self):
        e = 0.01
        a = np.linspace(0, 1, 64).reshape(8, 8)
        r = psnr(a + e, a, peak=1.0)
        assert r.db == pytest.approx(20.0 * np.log10(1.0 / e), abs=1e-9)

    def test_noise_monotonicity(self, rng):
        img = rng.uniform(0.2, 0.8, (16, 16))
        prev = np.inf
        for sigma in (0.001, 0.01, 0.05, 0.2):
            noisy = img + rng.normal(0, sigma, img.shape)
            cur = psnr(noisy, img).db
            assert cur < prev
            prev = cur


class TestSsimMetric:
    def test_identical(self, rng):
        img = rng.uniform(0, 1, (16, 16))
        assert ssim_metric(img, img.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_structure_lost_below_one(self, rng):
        img = rng.uniform(0, 1, (16, 16))
        flat = np.full_like(img, img.mean())
        assert ssim_metric(flat, img) < 1.0


class TestUmeyama:
    def test_exact_recovery(self, rng):
        src = rng.normal(size=(30, 3))
        from evsplat.se3 import so3_exp_matrix
        R = so3_exp_matrix(np.array([0.3, -0.5, 0.9]))
        s_true, t_true = 1.7, np.array([0.2, -1.0, 0.5])
        dst = s_true * src @ R.T + t_true
        s, R_est, t = umeyama_alignment(src, dst, with_scale=True)
        assert s == pytest.approx(s_true, abs=1e-9)
        assert np.allclose(R_est, R, atol=1e-9)
        assert np.allclose(t, t_true, atol=1e-9)


class TestAte:
    def test_self_ate_zero(self, rng):
        traj = random_trajectory(rng)
        r = ate_rmse(traj, traj, align_scale=True)
        assert r.rmse < 1e-9

    def test_rigid_transform_absorbed(self, rng):
        from evsplat.se3 import so3_exp_matrix
        traj = random_trajectory(rng)
        R = so3_exp_matrix(np.array([0.2, 0.4, -0.1]))
        moved = transform_trajectory(traj, 1.0, R, np.array([3.0, -2.0, 1.0]))
        assert ate_rmse(moved, traj, align_scale=False).rmse < 1e-9
        assert ate_rmse(moved, traj, align_scale=True).rmse < 1e-9

    def test_scale_needs_sim3(self, rng):
        traj = random_trajectory(rng)
        scaled = transform_trajectory(traj, 2.0, np.eye(3), np.zeros(3))
        assert ate_rmse(scaled, traj, align_scale=True).rmse < 1e-9
        assert ate_rmse(scaled, traj, align_scale=False).rmse > 1e-3

    def test_too_few_matches(self, rng):
        traj = random_trajectory(rng, n=5)
        far = TrajectoryEstimate(times=traj.times + 100.0, poses=traj.poses)
        with pytest.raises(TooFewMatches):
            ate_rmse(far, traj)

    def test_invariance_under_random_sim3(self, rng):
        from evsplat.se3 import so3_exp_matrix
        est = random_trajectory(rng)
        gt = transform_trajectory(est, 1.0, np.eye(3), np.zeros(3))
        # perturb the estimate so rmse > 0, then check invariance
        noisy_poses = [SE3Pose(p.rotation, p.translation + 0.01 * rng.normal(size=3))
                       for p in est.poses]
        noisy = TrajectoryEstimate(est.times.copy(), noisy_poses)
        base = ate_rmse(noisy, gt, align_scale=True).rmse
        for _ in range(5):
            R = so3_exp_matrix(rng.normal(size=3))
            s = rng.uniform(0.5, 2.0)
            t = rng.normal(size=3)
            moved = transform_trajectory(noisy, s, R, t)
            assert ate_rmse(moved, gt, align_scale=True).rmse == pytest.approx(base, abs=1e-9)
