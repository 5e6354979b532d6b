"""Trajectory and flow evaluation.

Projection endpoint error for normal flow, closed-form trajectory alignment
(rigid or similarity) on translations, absolute trajectory error after
alignment, and relative pose error over a frame interval or over
metric-length segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, SampleSetMismatch, TrajectoryTooShort
from .flowfield import NormalFlowField
from .geometry import Trajectory, validate_rotation


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray  # 3x3
    translation: np.ndarray  # 3-vector
    scale: float  # 1.0 in rigid mode
    residual_rmse: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (points @ self.rotation.T) + self.translation

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M


# segment lengths for percentage drift, odometry-benchmark convention
KITTI_SEGMENT_LENGTHS = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0]


@dataclass
class MetricReport:
    """RPE summary. In segment mode t_rel is percent of distance traveled and
    r_rel is degrees per 100 m; in interval mode they are trajectory units per
    delta frames and degrees per delta frames. The JSON field names are fixed
    either way."""

    t_rel: float
    r_rel: float
    per_pair: list[tuple[float, float]]
    delta: int
    ate_rmse: float | None = None
    segment_mode: bool = False

    def to_json_dict(self) -> dict:
        return {
            "ate_rmse_m": self.ate_rmse,
            "t_rel_pct": self.t_rel,
            "r_rel_deg_per_100m": self.r_rel,
            "delta": self.delta,
            "n_pairs": len(self.per_pair),
        }


def pee(predicted, ground_truth: NormalFlowField) -> float:
    """Projection endpoint error.

    predicted is either a NormalFlowField (scalar normal flow) or an (N, 2)
    array of full optical-flow vectors; the vectors are projected onto each
    ground-truth gradient direction. Either way the score is the mean
    distance between ground-truth and predicted flow along the gradient.
    """
    pts_gt, g, n_gt, _ = ground_truth.arrays()
    if isinstance(predicted, NormalFlowField):
        pts_p, _, n_pred, _ = predicted.arrays()
        if len(predicted) != len(ground_truth) or not np.allclose(pts_p, pts_gt, atol=1e-12):
            raise SampleSetMismatch("predicted and ground-truth sample points differ")
    else:
        flows = np.asarray(predicted, dtype=float)
        if flows.shape != (len(ground_truth), 2):
            raise SampleSetMismatch(
                f"expected {(len(ground_truth), 2)} flow vectors, got {flows.shape}"
            )
        n_pred = np.sum(flows * g, axis=1)
    return float(np.mean(np.abs(n_gt - n_pred)))


def horn_align(estimated: Trajectory, reference: Trajectory, mode: str = "rigid") -> AlignmentResult:
    """Closed-form least-squares transform taking estimated translations onto
    the reference: q ~ s R p + t. mode: 'rigid' or 'rigid+scale'."""
    if mode not in ("rigid", "rigid+scale"):
        raise ValueError(f"unknown alignment mode {mode!r}")
    if len(estimated) != len(reference):
        raise DegenerateConfiguration("trajectories must have equal length")
    if len(estimated) < 3:
        raise DegenerateConfiguration("need at least 3 poses to align")
    P = estimated.translations()
    Q = reference.translations()
    p_bar = P.mean(axis=0)
    q_bar = Q.mean(axis=0)
    X = P - p_bar
    Y = Q - q_bar
    C = (Y.T @ X) / len(P)
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if mode == "rigid+scale":
        var_p = float(np.mean(np.sum(X**2, axis=1)))
        if var_p == 0.0:
            raise DegenerateConfiguration("estimated translations are all identical")
        s = float(np.trace(np.diag(D) @ S)) / var_p
        if s <= 0:
            raise DegenerateConfiguration("alignment produced a nonpositive scale")
    else:
        s = 1.0
    t = q_bar - s * (R @ p_bar)
    resid = Q - (s * (P @ R.T) + t)
    return AlignmentResult(
        rotation=R,
        translation=t,
        scale=s,
        residual_rmse=float(np.sqrt(np.mean(np.sum(resid**2, axis=1)))),
    )


def ate(
    estimated: Trajectory,
    reference: Trajectory,
    mode: str = "rigid+scale",
    align: bool = True,
) -> float:
    """Absolute trajectory error: RMSE of the translational part of
    Q_t^{-1} S P_t after aligning the estimate to the reference."""
    if align:
        S = horn_align(estimated, reference, mode=mode).matrix()
    else:
        if len(estimated) != len(reference):
            raise DegenerateConfiguration("trajectories must have equal length")
        S = np.eye(4)
    errs = []
    for p, q in zip(estimated.poses, reference.poses):
        E = np.linalg.inv(q.matrix()) @ S @ p.matrix()
        errs.append(float(np.linalg.norm(E[:3, 3])))
    return float(np.sqrt(np.mean(np.square(errs))))


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle in [0, pi]; the arccos argument is clamped."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def _relative_error_matrix(estimated, reference, i, j) -> np.ndarray:
    Qrel = np.linalg.inv(reference.poses[i].matrix()) @ reference.poses[j].matrix()
    Prel = np.linalg.inv(estimated.poses[i].matrix()) @ estimated.poses[j].matrix()
    return np.linalg.inv(Qrel) @ Prel


def rpe(
    estimated: Trajectory,
    reference: Trajectory,
    delta: int = 1,
    segment_lengths_m: float | list[float] | None = None,
) -> MetricReport:
    """Relative pose error.

    Without segment lengths: error matrices over all index pairs (t, t+delta);
    t_rel is the RMSE of their translation norms (trajectory units), r_rel the
    mean rotation angle in degrees. With segment lengths: odometry-benchmark
    style drift, segments found by cumulative reference path length from every
    start frame; t_rel in percent, r_rel in degrees per 100 m.
    """
    if len(estimated) != len(reference):
        raise DegenerateConfiguration("trajectories must have equal length")
    n = len(reference)
    if segment_lengths_m is None:
        if n <= delta:
            raise TrajectoryTooShort(f"length {n} <= delta {delta}")
        per_pair = []
        for t in range(n - delta):
            F = _relative_error_matrix(estimated, reference, t, t + delta)
            per_pair.append((float(np.linalg.norm(F[:3, 3])), rotation_angle(F[:3, :3])))
        t_rel = float(np.sqrt(np.mean([e[0] ** 2 for e in per_pair])))
        r_rel = float(np.degrees(np.mean([e[1] for e in per_pair])))
        return MetricReport(t_rel=t_rel, r_rel=r_rel, per_pair=per_pair, delta=delta)

    if np.isscalar(segment_lengths_m):
        segment_lengths_m = [float(segment_lengths_m)]
    Q = reference.translations()
    step_len = np.linalg.norm(np.diff(Q, axis=0), axis=1)
    cumdist = np.concatenate([[0.0], np.cumsum(step_len)])
    per_pair = []
    for i in range(n):
        for L in segment_lengths_m:
            target = cumdist[i] + L
            j = int(np.searchsorted(cumdist, target))
            if j >= n:
                continue
            dist = cumdist[j] - cumdist[i]
            if dist <= 0:
                continue
            F = _relative_error_matrix(estimated, reference, i, j)
            t_pct = 100.0 * float(np.linalg.norm(F[:3, 3])) / dist
            r_per100 = np.degrees(rotation_angle(F[:3, :3])) * (100.0 / dist)
            per_pair.append((t_pct, r_per100))
    if not per_pair:
        raise TrajectoryTooShort("no segment of the requested lengths fits the trajectory")
    t_rel = float(np.mean([e[0] for e in per_pair]))
    r_rel = float(np.mean([e[1] for e in per_pair]))
    return MetricReport(
        t_rel=t_rel, r_rel=r_rel, per_pair=per_pair, delta=delta, segment_mode=True
    )
