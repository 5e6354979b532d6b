"""Dataset ingestion and synthetic scenario generation.

Parsers and serializers for the two common trajectory text formats
(timestamp + quaternion lines, and 3x4 row-major pose lines), plus a seeded
scenario generator that produces normal-flow fields with exact ground truth
for the solver tests and the robustness sweeps.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidConfig,
    MalformedLine,
    NonRotationMatrix,
    NonUnitQuaternion,
)
from .flowfield import DepthMap, NormalFlowField, inject_noise, synthesize_normal_flow
from .geometry import (
    FOV_LIMIT,
    AbsolutePose,
    CameraMotion,
    Trajectory,
    integrate_motions,
)

log = logging.getLogger(__name__)

# noise generators are keyed off the scenario seed per frame pair; the prime
# keeps them disjoint from the geometry streams seeded by (seed, pair index)
NOISE_SEED_STRIDE = 100003


# ---------------------------------------------------------------------------
# Scenario configuration

@dataclass
class ScenarioConfig:
    seed: int = 0
    sample_count: int = 500
    depth_range: tuple[float, float] = (1.0, 50.0)
    motion: CameraMotion | list[CameraMotion] = field(
        default_factory=lambda: CameraMotion(V=[0.0, 0.0, 1.0], Omega=[0.0, 0.0, 0.0])
    )
    frame_count: int = 1  # number of frame pairs
    noise_pct: float = 0.0
    gradient_mode: str = "uniform"  # uniform | axis-biased
    gradient_axis_ratio: float = 10.0  # biased:uniform mixture odds
    gradient_axis_angle: float = 0.0  # radians, dominant gradient axis
    fov: float = 1.0  # half-width of the sample box in normalized coordinates
    dt: float = 1.0

    def __post_init__(self):
        if self.sample_count < 6:
            raise InvalidConfig("sample_count must be at least 6")
        zmin, zmax = self.depth_range
        if zmin <= 0:
            raise InvalidConfig("depth range minimum must be positive")
        if zmax < zmin:
            raise InvalidConfig("depth range must be ordered (min, max)")
        if self.frame_count < 1:
            raise InvalidConfig("frame_count must be at least 1")
        if self.noise_pct < 0:
            raise InvalidConfig("noise_pct must be nonnegative")
        if self.gradient_mode not in ("uniform", "axis-biased"):
            raise InvalidConfig(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.gradient_axis_ratio <= 0:
            raise InvalidConfig("gradient_axis_ratio must be positive")
        if not (0 < self.fov <= FOV_LIMIT):
            raise InvalidConfig(f"fov must be in (0, {FOV_LIMIT}]")
        if self.dt <= 0:
            raise InvalidConfig("dt must be positive")
        if isinstance(self.motion, list) and len(self.motion) != self.frame_count:
            raise InvalidConfig(
                f"motion list length {len(self.motion)} != frame_count {self.frame_count}"
            )

    def motions(self) -> list[CameraMotion]:
        if isinstance(self.motion, list):
            return list(self.motion)
        return [self.motion] * self.frame_count

    def to_json_dict(self) -> dict:
        def enc(m: CameraMotion) -> dict:
            return {"V": m.V.tolist(), "Omega": m.Omega.tolist()}

        return {
            "seed": self.seed,
            "sample_count": self.sample_count,
            "depth_range": list(self.depth_range),
            "motion": [enc(m) for m in self.motion]
            if isinstance(self.motion, list)
            else enc(self.motion),
            "frame_count": self.frame_count,
            "noise_pct": self.noise_pct,
            "gradient_mode": self.gradient_mode,
            "gradient_axis_ratio": self.gradient_axis_ratio,
            "gradient_axis_angle": self.gradient_axis_angle,
            "fov": self.fov,
            "dt": self.dt,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScenarioConfig":
        def dec(m) -> CameraMotion:
            try:
                return CameraMotion(V=m["V"], Omega=m["Omega"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidConfig(f"bad motion spec: {exc}") from exc

        known = {
            "seed", "sample_count", "depth_range", "motion", "frame_count",
            "noise_pct", "gradient_mode", "gradient_axis_ratio",
            "gradient_axis_angle", "fov", "dt",
        }
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "depth_range" in kwargs:
            dr = kwargs["depth_range"]
            if not isinstance(dr, (list, tuple)) or len(dr) != 2:
                raise InvalidConfig("depth_range must be a [min, max] pair")
            kwargs["depth_range"] = (float(dr[0]), float(dr[1]))
        if "motion" in kwargs:
            m = kwargs["motion"]
            kwargs["motion"] = [dec(mi) for mi in m] if isinstance(m, list) else dec(m)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


def load_scenario_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: config must be a JSON object")
    return ScenarioConfig.from_json_dict(data)


def save_scenario_config(cfg: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Quaternion helpers (x, y, z, w component order as in the text format)

def _quat_to_rotation(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    x, y, z, w = qx, qy, qz, qw
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _rotation_to_quat(R: np.ndarray) -> tuple[float, float, float, float]:
    """(qx, qy, qz, qw) with qw >= 0. Branches on the largest diagonal term
    so the division is always well conditioned."""
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        qw = 0.25 * s
        qx = (R[2, 1] - R[1, 2]) / s
        qy = (R[0, 2] - R[2, 0]) / s
        qz = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        qw = (R[2, 1] - R[1, 2]) / s
        qx = 0.25 * s
        qy = (R[0, 1] + R[1, 0]) / s
        qz = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        qw = (R[0, 2] - R[2, 0]) / s
        qx = (R[0, 1] + R[1, 0]) / s
        qy = 0.25 * s
        qz = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        qw = (R[1, 0] - R[0, 1]) / s
        qx = (R[0, 2] + R[2, 0]) / s
        qy = (R[1, 2] + R[2, 1]) / s
        qz = 0.25 * s
    if qw < 0:
        qx, qy, qz, qw = -qx, -qy, -qz, -qw
    return float(qx), float(qy), float(qz), float(qw)


# ---------------------------------------------------------------------------
# Trajectory text formats

def parse_tum_trajectory(text: str) -> Trajectory:
    """Lines of "timestamp tx ty tz qx qy qz qw"; '#' starts a comment.
    Quaternions must be unit length within 1e-3 and are renormalized; poses
    are sorted by timestamp."""
    records = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 8:
            raise MalformedLine(line_no, f"expected 8 fields, got {len(tokens)}")
        try:
            ts, tx, ty, tz, qx, qy, qz, qw = (float(t) for t in tokens)
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from exc
        qnorm = np.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
        if abs(qnorm - 1.0) > 1e-3:
            raise NonUnitQuaternion(line_no, f"|q| = {qnorm:.6f}")
        qx, qy, qz, qw = qx / qnorm, qy / qnorm, qz / qnorm, qw / qnorm
        records.append((ts, np.array([tx, ty, tz]), _quat_to_rotation(qx, qy, qz, qw)))
    if not records:
        raise MalformedLine(0, "no pose lines in trajectory text")
    records.sort(key=lambda r: r[0])
    poses = [AbsolutePose(rotation=R, translation=T, timestamp=ts) for ts, T, R in records]
    return Trajectory(poses)


def serialize_tum_trajectory(traj: Trajectory) -> str:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for p in traj.poses:
        qx, qy, qz, qw = _rotation_to_quat(p.rotation)
        fields = (p.timestamp, *p.translation, qx, qy, qz, qw)
        lines.append(" ".join(format(v, ".17g") for v in fields))
    return "\n".join(lines) + "\n"


def parse_kitti_poses(text: str, frame_dt: float = 0.1) -> Trajectory:
    """Lines of 12 numbers: row-major 3x4 [R|T]. The format carries no
    timestamps, so they are synthesized as index * frame_dt. Rotation blocks
    with orthonormality drift above 1e-6 are logged and re-orthonormalized;
    determinant off by more than 1e-2 is an error."""
    if frame_dt <= 0:
        raise InvalidConfig("frame_dt must be positive")
    poses = []
    index = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 12:
            raise MalformedLine(line_no, f"expected 12 fields, got {len(tokens)}")
        try:
            vals = np.array([float(t) for t in tokens]).reshape(3, 4)
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from exc
        R, T = vals[:, :3], vals[:, 3]
        if abs(np.linalg.det(R) - 1.0) > 1e-2:
            raise NonRotationMatrix(line_no, f"det = {np.linalg.det(R):.4f}")
        drift = np.linalg.norm(R.T @ R - np.eye(3))
        if drift > 1e-9:
            if drift > 1e-6:
                log.warning("line %d: orthonormality drift %.3e, re-orthonormalizing",
                            line_no, drift)
            U, _, Vt = np.linalg.svd(R)
            S = np.eye(3)
            S[2, 2] = np.sign(np.linalg.det(U @ Vt))
            R = U @ S @ Vt
        poses.append(AbsolutePose(rotation=R, translation=T, timestamp=index * frame_dt))
        index += 1
    if not poses:
        raise MalformedLine(0, "no pose lines in trajectory text")
    return Trajectory(poses)


def serialize_kitti_poses(traj: Trajectory) -> str:
    lines = []
    for p in traj.poses:
        M = np.hstack([p.rotation, p.translation.reshape(3, 1)])
        lines.append(" ".join(format(v, ".17g") for v in M.reshape(-1)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Synthetic scenarios

def _sample_gradient_angles(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.gradient_mode == "uniform":
        return rng.uniform(0.0, 2.0 * np.pi, size=cfg.sample_count)
    # mixture: with odds ratio:1 the direction hugs the dominant axis
    # (either sign) within 15 degrees, otherwise it is uniform
    p_axis = cfg.gradient_axis_ratio / (cfg.gradient_axis_ratio + 1.0)
    angles = np.empty(cfg.sample_count)
    for i in range(cfg.sample_count):
        if rng.random() < p_axis:
            a = cfg.gradient_axis_angle + rng.uniform(-np.pi / 12.0, np.pi / 12.0)
            if rng.random() < 0.5:
                a += np.pi
            angles[i] = a
        else:
            angles[i] = rng.uniform(0.0, 2.0 * np.pi)
    return angles


def generate_scenario(
    cfg: ScenarioConfig,
) -> tuple[list[NormalFlowField], Trajectory, list[DepthMap]]:
    """Seeded forward model.

    Each frame pair k draws its own points, depths, and gradient directions
    from a generator keyed by (seed, k), synthesizes exact normal flow for the
    pair's motion, then optionally perturbs it with inject_noise. The returned
    trajectory integrates the motion spec, so relative_motion on consecutive
    poses reproduces the per-frame (V, Omega).
    """
    motions = cfg.motions()
    fields: list[NormalFlowField] = []
    depth_maps: list[DepthMap] = []
    zmin, zmax = cfg.depth_range
    for k, motion in enumerate(motions):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, k))))
        points = rng.uniform(-cfg.fov, cfg.fov, size=(cfg.sample_count, 2))
        depths = DepthMap(rng.uniform(zmin, zmax, size=cfg.sample_count))
        angles = _sample_gradient_angles(cfg, rng)
        gradients = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        fld = synthesize_normal_flow(
            motion, depths, points, gradients, frame_pair=(k, k + 1)
        )
        if cfg.noise_pct > 0:
            fld = inject_noise(fld, cfg.noise_pct, seed=cfg.seed * NOISE_SEED_STRIDE + k)
        fields.append(fld)
        depth_maps.append(depths)
    trajectory = integrate_motions(motions, dt=cfg.dt)
    return fields, trajectory, depth_maps
