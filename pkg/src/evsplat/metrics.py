"""Evaluation metrics: PSNR, SSIM, Umeyama-aligned ATE, and the linear color
transform applied to predictions before image metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, TooFewMatches, TooSmall
from .losses import LossConfig, ssim_mean
from .se3 import SE3Pose, matrix_to_quat


@dataclass
class TrajectoryEstimate:
    """Time-stamped pose samples with strictly increasing timestamps."""

    times: np.ndarray
    poses: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if len(self.times) != len(self.poses):
            raise ValueError("times and poses length mismatch")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def positions(self):
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    @staticmethod
    def from_samples(samples):
        return TrajectoryEstimate(times=[t for t, _ in samples],
                                  poses=[p for _, p in samples])


@dataclass
class LinearFit:
    transformed: np.ndarray
    gain: np.ndarray
    offset: np.ndarray
    degenerate: bool


def linear_color_transform(pred, gt) -> LinearFit:
    """Per-channel least-squares gain/offset fit of pred onto gt.

    A constant prediction has no least-squares gain; the output is then the
    gt-mean fill with the degenerate flag set.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimMismatch(f"image shapes differ: {p.shape} vs {g.shape}")
    p3 = p.reshape(p.shape[0], p.shape[1], -1)
    g3 = g.reshape(*p3.shape)
    out = np.empty_like(p3)
    gains = np.zeros(p3.shape[2])
    offsets = np.zeros(p3.shape[2])
    degenerate = False
    for c in range(p3.shape[2]):
        x = p3[..., c].ravel()
        y = g3[..., c].ravel()
        var = x.var()
        if var < 1e-15:
            degenerate = True
            gains[c] = 0.0
            offsets[c] = y.mean()
            out[..., c] = y.mean()
            continue
        a = ((x - x.mean()) * (y - y.mean())).mean() / var
        b = y.mean() - a * x.mean()
        gains[c] = a
        offsets[c] = b
        out[..., c] = a * p3[..., c] + b
    return LinearFit(transformed=out.reshape(p.shape), gain=gains,
                     offset=offsets, degenerate=degenerate)


@dataclass
class PsnrResult:
    db: float
    identical: bool

    def __float__(self):
        return self.db


def psnr(pred, gt, peak=1.0) -> PsnrResult:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimMismatch(f"image shapes differ: {p.shape} vs {g.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(((p - g) ** 2).mean())
    if mse == 0.0:
        return PsnrResult(db=float("inf"), identical=True)
    return PsnrResult(db=10.0 * np.log10(peak * peak / mse), identical=False)


def ssim_metric(pred, gt, peak=1.0):
    """Mean SSIM, 11x11 Gaussian window sigma 1.5, peak-scaled stabilizers."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimMismatch(f"image shapes differ: {p.shape} vs {g.shape}")
    cfg = LossConfig(ssim_c1=(0.01 * peak) ** 2, ssim_c2=(0.03 * peak) ** 2)
    if p.ndim == 2:
        return ssim_mean(p, g, cfg)
    return float(np.mean([ssim_mean(p[..., c], g[..., c], cfg) for c in range(p.shape[2])]))


def umeyama_alignment(src, dst, with_scale=True):
    """Closed-form similarity transform: dst ~ s * R @ src + t."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = (xs ** 2).sum() / len(src)
        s = float(np.trace(np.diag(D) @ S) / var_s) if var_s > 0 else 1.0
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def associate(est: TrajectoryEstimate, gt: TrajectoryEstimate):
    """Nearest-timestamp association within half the median gt sample spacing."""
    spacing = float(np.median(np.diff(gt.times))) if len(gt.times) > 1 else np.inf
    tol = 0.5 * spacing
    pairs = []
    for i, t in enumerate(est.times):
        j = int(np.argmin(np.abs(gt.times - t)))
        if abs(gt.times[j] - t) <= tol:
            pairs.append((i, j))
    return pairs


@dataclass
class AteResult:
    rmse: float
    aligned: TrajectoryEstimate
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    n_matches: int


def ate_rmse(est: TrajectoryEstimate, gt: TrajectoryEstimate, align_scale=True) -> AteResult:
    """Umeyama-aligned RMSE of translation residuals (absolute trajectory error)."""
    pairs = associate(est, gt)
    if len(pairs) < 3:
        raise TooFewMatches(f"only {len(pairs)} associated pose pairs, need >= 3")
    ei = [i for i, _ in pairs]
    gi = [j for _, j in pairs]
    p_est = est.positions[ei]
    p_gt = gt.positions[gi]
    s, R, t = umeyama_alignment(p_est, p_gt, with_scale=align_scale)
    resid = (s * (R @ p_est.T).T + t) - p_gt
    rmse = float(np.sqrt((resid ** 2).sum(axis=1).mean()))
    q_align = matrix_to_quat(R)
    aligned_poses = []
    for i, pose in enumerate(est.poses):
        pos = s * R @ pose.translation + t
        rot = SE3Pose(q_align, np.zeros(3)).compose(pose)
        aligned_poses.append(SE3Pose(rot.rotation, pos))
    aligned = TrajectoryEstimate(times=est.times.copy(), poses=aligned_poses)
    return AteResult(rmse=rmse, aligned=aligned, scale=s, rotation=R,
                     translation=t, n_matches=len(pairs))


def transform_pose_to_frame(pose: SE3Pose, scale, R, t) -> SE3Pose:
    """Map a camera-to-world pose through the inverse of a similarity transform.

    Given the Umeyama fit est->gt (x_gt = s R x_est + t), this returns the pose
    in the estimate frame whose view corresponds to `pose` given in the gt
    frame; pinhole images are invariant to the global scale.
    """
    Rinv = np.asarray(R).T
    pos = Rinv @ (pose.translation - np.asarray(t)) / scale
    rot = SE3Pose(matrix_to_quat(Rinv), np.zeros(3)).compose(pose)
    return SE3Pose(rot.rotation, pos)
