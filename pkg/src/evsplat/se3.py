"""Rigid-body pose algebra and per-chunk linear trajectory interpolation.

Conventions used throughout the package:

* quaternions are stored (w, x, y, z) with unit norm,
* twist vectors are ordered (rotational part, translational part),
* local perturbations are right-multiplicative: ``T <- T * exp(delta)``,
* trajectory poses are camera-to-world; the renderer inverts internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi, OutOfSegment

SMALL_ANGLE = 1e-8


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    # keep already-unit quaternions bit-identical so state round trips exactly
    if abs(n - 1.0) < 1e-12:
        return q.copy()
    return q / n


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (w >= 0 branch chosen by stability)."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class SE3Pose:
    """Rigid transform as unit quaternion (w, x, y, z) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=np.float64))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity():
        return SE3Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def rotation_matrix(self):
        return quat_to_matrix(self.rotation)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        q = quat_multiply(self.rotation, other.rotation)
        t = self.rotation_matrix() @ other.translation + self.translation
        return SE3Pose(q, t)

    def inverse(self) -> "SE3Pose":
        qc = quat_conjugate(self.rotation)
        return SE3Pose(qc, -(quat_to_matrix(qc) @ self.translation))

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_matrix().T + self.translation

    def retract(self, delta) -> "SE3Pose":
        """Right-multiplicative update T * exp(delta), delta = (rot, trans)."""
        return self.compose(se3_exp(Twist.from_vector(delta)))


@dataclass(frozen=True)
class Twist:
    """se(3) tangent element: rotational part (radians) and translational part."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=np.float64).reshape(3))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64).reshape(3))

    def as_vector(self):
        return np.concatenate([self.rot, self.trans])

    @staticmethod
    def from_vector(v):
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return Twist(v[:3], v[3:])

    @staticmethod
    def zero():
        return Twist(np.zeros(3), np.zeros(3))


def so3_exp_matrix(phi):
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        # second-order Taylor; error O(theta^4)
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R):
    R = np.asarray(R, dtype=np.float64)
    cos_t = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    theta = np.arccos(cos_t)
    if theta >= np.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi")
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    return w * theta / np.sin(theta)


def _so3_V(phi):
    """Left Jacobian of SO(3): translation mixing block of the SE(3) exp."""
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    a = (1.0 - np.cos(theta)) / (theta * theta)
    b = (theta - np.sin(theta)) / (theta ** 3)
    return np.eye(3) + a * K + b * (K @ K)


def _so3_V_inv(phi):
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    c = (1.0 / (theta * theta)
         - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta)))
    return np.eye(3) - 0.5 * K + c * (K @ K)


def se3_exp(xi: Twist) -> SE3Pose:
    """Closed-form Rodrigues exponential of a twist."""
    R = so3_exp_matrix(xi.rot)
    t = _so3_V(xi.rot) @ xi.trans
    return SE3Pose(matrix_to_quat(R), t)


def se3_log(T: SE3Pose) -> Twist:
    """Inverse of se3_exp; raises AngleNearPi for angles >= pi - 1e-6."""
    phi = so3_log(T.rotation_matrix())
    rho = _so3_V_inv(phi) @ T.translation
    return Twist(phi, rho)


def se3_adjoint(T: SE3Pose):
    """Adjoint matrix mapping twists across frames, (rot, trans) ordering."""
    R = T.rotation_matrix()
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, :3] = skew(T.translation) @ R
    A[3:, 3:] = R
    return A


def _se3_ad(xi_vec):
    """Lie-algebra adjoint ad_xi, (rot, trans) ordering."""
    phi, rho = xi_vec[:3], xi_vec[3:]
    A = np.zeros((6, 6))
    A[:3, :3] = skew(phi)
    A[3:, :3] = skew(rho)
    A[3:, 3:] = skew(phi)
    return A


def se3_left_jacobian(xi_vec):
    """Left Jacobian of SE(3) via the convergent ad-series sum_n ad^n/(n+1)!."""
    J = np.eye(6)
    term = np.eye(6)
    A = _se3_ad(np.asarray(xi_vec, dtype=np.float64))
    for n in range(1, 60):
        term = (term @ A) / (n + 1.0)
        J += term
        if np.abs(term).max() < 1e-17:
            break
    return J


def se3_right_jacobian(xi_vec):
    return se3_left_jacobian(-np.asarray(xi_vec, dtype=np.float64))


@dataclass(frozen=True)
class TrajectorySegment:
    """One chunk's pose pair with its time bounds; interpolated linearly in se(3)."""

    t_start: float
    t_end: float
    pose_start: SE3Pose
    pose_end: SE3Pose

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"segment requires t_start < t_end, got [{self.t_start}, {self.t_end}]")

    def duration(self):
        return self.t_end - self.t_start


def _segment_fraction(seg: TrajectorySegment, t: float) -> float:
    span = seg.t_end - seg.t_start
    slack = 1e-9 * span
    if t < seg.t_start - slack or t > seg.t_end + slack:
        raise OutOfSegment(f"t={t} outside segment [{seg.t_start}, {seg.t_end}]")
    return min(1.0, max(0.0, (t - seg.t_start) / span))


def interpolate_pose(seg: TrajectorySegment, t: float) -> SE3Pose:
    """Pose at time t: T_start * exp(tau * log(T_start^-1 * T_end)).

    Endpoints are returned exactly (bit-for-bit up to quaternion sign).
    """
    tau = _segment_fraction(seg, t)
    if tau == 0.0:
        return seg.pose_start
    if tau == 1.0:
        return seg.pose_end
    rel = se3_log(seg.pose_start.inverse().compose(seg.pose_end))
    step = Twist(tau * rel.rot, tau * rel.trans)
    return seg.pose_start.compose(se3_exp(step))


def interpolate_pose_jacobian(seg: TrajectorySegment, t: float):
    """6x6 Jacobians of the interpolated pose w.r.t. both endpoint poses.

    All three poses are perturbed right-multiplicatively; for endpoint
    perturbations delta the interpolated pose moves by
    ``exp(J_start @ d_start + J_end @ d_end)`` to first order.

    Returns (J_start, J_end).
    """
    tau = _segment_fraction(seg, t)
    A = se3_log(seg.pose_start.inverse().compose(seg.pose_end)).as_vector()
    tauA = tau * A
    Jr_tau = se3_right_jacobian(tauA)
    J_end = tau * (Jr_tau @ np.linalg.inv(se3_right_jacobian(A)))
    adj_inv = se3_adjoint(se3_exp(Twist.from_vector(-tauA)))
    J_start = adj_inv - tau * (Jr_tau @ np.linalg.inv(se3_left_jacobian(A)))
    return J_start, J_end


def rotation_angle_between(a: SE3Pose, b: SE3Pose) -> float:
    dot = abs(float(np.dot(a.rotation, b.rotation)))
    return 2.0 * np.arccos(min(1.0, dot))


def write_tum(path, samples):
    """Write trajectory samples [(t, SE3Pose), ...] in TUM format.

    One line per sample: ``timestamp tx ty tz qx qy qz qw`` with the
    timestamp printed with 6 decimals.
    """
    with open(path, "w", encoding="utf-8") as f:
        for t, pose in samples:
            w, x, y, z = pose.rotation
            tx, ty, tz = pose.translation
            f.write("%.6f %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n"
                    % (t, tx, ty, tz, x, y, z, w))


def read_tum(path):
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise ValueError(f"TUM line needs 8 fields, got {len(vals)}: {line!r}")
            t, tx, ty, tz, qx, qy, qz, qw = vals
            samples.append((t, SE3Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))))
    return samples
