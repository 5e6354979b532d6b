"""Differential-motion geometry.

Interaction matrices for the instantaneous motion field, SO(3) exp/log,
relative motion between timestamped poses, and pixel/normalized coordinate
conversions. All solver math runs in calibrated coordinates (focal length 1);
pixel data is converted at ingestion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AngleNearPi, NonPositiveDt

FOV_LIMIT = 1.5  # |x|, |y| bound for normalized image points


@dataclass(frozen=True)
class ImagePoint:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError("image point must be finite")
        if abs(self.x) > FOV_LIMIT or abs(self.y) > FOV_LIMIT:
            raise ValueError(f"image point outside field of view limit {FOV_LIMIT}")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class CameraMotion:
    """Instantaneous relative pose: translational V and rotational Omega (rad/frame)."""

    V: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float).reshape(3))
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.V)) and np.all(np.isfinite(self.Omega))):
            raise ValueError("camera motion must be finite")


@dataclass(frozen=True)
class AbsolutePose:
    rotation: np.ndarray  # 3x3, orthonormal, det +1
    translation: np.ndarray  # 3-vector, meters
    timestamp: float  # seconds

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        T = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)
        if not np.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        validate_rotation(R)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


@dataclass
class Trajectory:
    poses: list[AbsolutePose] = field(default_factory=list)

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("trajectory needs at least one pose")
        ts = [p.timestamp for p in self.poses]
        if any(t1 <= t0 for t0, t1 in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def translations(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses])


def validate_rotation(R: np.ndarray, tol: float = 1e-9) -> None:
    if np.linalg.norm(R.T @ R - np.eye(3)) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix is not a rotation")


def skew(omega: np.ndarray) -> np.ndarray:
    """Antisymmetric matrix with skew(w) @ v == cross(w, v)."""
    wx, wy, wz = np.asarray(omega, dtype=float).reshape(3)
    return np.array([
        [0.0, -wz, wy],
        [wz, 0.0, -wx],
        [-wy, wx, 0.0],
    ])


def unskew(M: np.ndarray) -> np.ndarray:
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix exponential (Rodrigues)."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-8:
        # second-order series keeps the result orthonormal to machine precision
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * (K @ K)
    )


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal-branch rotation logarithm; rejects angles at pi."""
    R = np.asarray(R, dtype=float).reshape(3, 3)
    tr = np.trace(R)
    if tr <= -1.0 + 1e-6:
        raise AngleNearPi("rotation angle too close to pi for the principal branch")
    cos_theta = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = unskew(R - R.T)  # equals 2 sin(theta) * axis
    if theta < 1e-8:
        return 0.5 * w
    return (theta / (2.0 * np.sin(theta))) * w


def interaction_matrices(p: ImagePoint) -> tuple[np.ndarray, np.ndarray]:
    """Per-point 2x3 maps from (V, Omega) to image motion at p."""
    x, y = p.x, p.y
    A = np.array([
        [-1.0, 0.0, x],
        [0.0, -1.0, y],
    ])
    B = np.array([
        [x * y, -(x**2 + 1.0), y],
        [y**2 + 1.0, -x * y, -x],
    ])
    return A, B


def relative_motion(p0: AbsolutePose, p1: AbsolutePose) -> CameraMotion:
    """Velocities between consecutive poses under a linear-velocity model."""
    dt = p1.timestamp - p0.timestamp
    if dt <= 0:
        raise NonPositiveDt(f"dt = {dt}")
    V = (p1.translation - p0.translation) / dt
    Omega = so3_log(p0.rotation.T @ p1.rotation) / dt
    return CameraMotion(V=V, Omega=Omega)


def integrate_motions(
    motions: list[CameraMotion], dt: float = 1.0, start: AbsolutePose | None = None
) -> Trajectory:
    """Chain per-frame motions into an absolute trajectory.

    Inverse of relative_motion on consecutive poses: the returned trajectory
    satisfies relative_motion(poses[k], poses[k+1]) == motions[k].
    """
    if dt <= 0:
        raise NonPositiveDt(f"dt = {dt}")
    if start is None:
        start = AbsolutePose(np.eye(3), np.zeros(3), 0.0)
    poses = [start]
    for m in motions:
        prev = poses[-1]
        poses.append(
            AbsolutePose(
                rotation=prev.rotation @ so3_exp(m.Omega * dt),
                translation=prev.translation + m.V * dt,
                timestamp=prev.timestamp + dt,
            )
        )
    return Trajectory(poses)


def pixel_to_normalized(u: float, v: float, K: CameraIntrinsics) -> ImagePoint:
    return ImagePoint(x=(u - K.cx) / K.fx, y=(v - K.cy) / K.fy)


def normalized_to_pixel(p: ImagePoint, K: CameraIntrinsics) -> tuple[float, float]:
    return p.x * K.fx + K.cx, p.y * K.fy + K.cy


def euler_xyz_to_rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    """X-Y-Z Euler angles to rotation matrix. I/O convenience only."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rx @ Ry @ Rz


def rotation_to_euler_xyz(R: np.ndarray) -> tuple[float, float, float]:
    R = np.asarray(R, dtype=float)
    ry = np.arcsin(np.clip(R[0, 2], -1.0, 1.0))
    if abs(R[0, 2]) < 1.0 - 1e-12:
        rx = np.arctan2(-R[1, 2], R[2, 2])
        rz = np.arctan2(-R[0, 1], R[0, 0])
    else:
        # gimbal lock: fold the indistinguishable rotation into rx
        rx = np.arctan2(R[2, 1], R[1, 1])
        rz = 0.0
    return float(rx), float(ry), float(rz)
