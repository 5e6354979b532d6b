"""Depth-positivity pose estimation.

For a flow sample with gradient direction g at point p, the product
rho = ((g.A)V) * (n - (g.B)Omega) is nonnegative at the true motion because
it equals the squared translational flow component divided by the (positive)
depth. The solver minimizes a smoothed penalty on negative rho over all
samples, alternating between the translation direction (on the unit sphere;
scale is unobservable) and the rotation (unconstrained), since rho is
bilinear in the two blocks. Depths are recovered afterwards by rearranging
the flow model.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.special import erf

from .errors import DegenerateField, TooFewSamples
from .flowfield import FlowSample, NormalFlowField, motion_coefficients
from .geometry import CameraMotion, interaction_matrices
from .optimizer import OptimizerConfig, SolveReport, minimize, minimize_on_sphere

DEPTH_DENOMINATOR_FLOOR = 1e-9


@dataclass
class CheiralityProblem:
    field: NormalFlowField
    init: CameraMotion
    optimizer_cfg: OptimizerConfig = dataclass_field(default_factory=OptimizerConfig)
    max_outer_rounds: int = 20
    outer_tolerance: float = 1e-10  # stop when the objective changes less than this

    def __post_init__(self):
        if np.linalg.norm(self.init.V) == 0.0:
            raise ValueError("init must have a nonzero translation direction")


@dataclass
class PoseEstimate:
    motion: CameraMotion  # |V| = 1
    objective_value: float
    report: list[SolveReport]  # one per sub-solve, in execution order
    rounds: int
    outer_trace: list[float] = dataclass_field(default_factory=list)


def _norm_cdf(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(t / np.sqrt(2.0)))


def _norm_pdf(t: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)


def _penalty(rho: np.ndarray) -> np.ndarray:
    """R(rho) = GELU(-rho): smooth penalty on cheirality violations."""
    return -rho * _norm_cdf(-rho)


def _penalty_derivative(rho: np.ndarray) -> np.ndarray:
    return -_norm_cdf(-rho) + rho * _norm_pdf(rho)


def rho(sample: FlowSample, motion: CameraMotion) -> float:
    """Cheirality product for one sample: ((g.A)V) * (n - (g.B)Omega)."""
    A, B = interaction_matrices(sample.point)
    t = float(sample.g @ (A @ motion.V))
    u = sample.n - float(sample.g @ (B @ motion.Omega))
    return t * u


def objective(
    field: NormalFlowField, motion: CameraMotion
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted mean of R(rho) over the field, with analytic gradients.

    Returns (value, d value/d V, d value/d Omega).
    """
    pts, g, n, w = field.arrays()
    a, b = motion_coefficients(pts, g)
    wsum = float(np.sum(w))
    if wsum == 0.0:
        raise ValueError("all sample weights are zero")
    t = a @ motion.V
    u = n - b @ motion.Omega
    r = t * u
    value = float(np.sum(w * _penalty(r)) / wsum)
    coeff = w * _penalty_derivative(r) / wsum
    grad_v = (coeff * u) @ a
    grad_omega = -(coeff * t) @ b
    return value, grad_v, grad_omega


def depth_from_pose(sample: FlowSample, motion: CameraMotion) -> float | None:
    """Recover depth Z = (g.A)V / (n - (g.B)Omega); None when the derotated
    flow is too small to divide by. No sign filtering: callers check Z > 0."""
    A, B = interaction_matrices(sample.point)
    numer = float(sample.g @ (A @ motion.V))
    denom = sample.n - float(sample.g @ (B @ motion.Omega))
    if abs(denom) <= DEPTH_DENOMINATOR_FLOOR:
        return None
    return numer / denom


def solve_pose(problem: CheiralityProblem) -> PoseEstimate:
    """Alternating bilinear solve of the smoothed cheirality objective.

    Each round minimizes over V on the unit sphere with Omega fixed, then
    over Omega unconstrained with V fixed. The loop stops when the objective
    value (floored at zero: the smoothed penalty can go slightly negative on
    all-satisfied fields) falls below the objective tolerance, when a round
    changes the objective by less than the outer tolerance, or at the round
    limit.
    """
    fld = problem.field
    if len(fld) < 6:
        raise TooFewSamples(f"{len(fld)} samples; need at least 6 for 5 motion unknowns")
    pts, g, n, w = fld.arrays()
    a, b = motion_coefficients(pts, g)
    wsum = float(np.sum(w))
    if wsum == 0.0:
        raise ValueError("all sample weights are zero")

    V = problem.init.V / np.linalg.norm(problem.init.V)
    Omega = problem.init.Omega.copy()
    if np.max(np.abs(a @ V)) < 1e-9:
        raise DegenerateField("no translational flow component for the initial V")

    def value_at(V_, Omega_):
        r = (a @ V_) * (n - b @ Omega_)
        return float(np.sum(w * _penalty(r)) / wsum)

    def v_step_objective(Omega_):
        u = n - b @ Omega_

        def fn(v):
            t = a @ v
            r = t * u
            val = float(np.sum(w * _penalty(r)) / wsum)
            grad = ((w * _penalty_derivative(r) / wsum) * u) @ a
            return val, grad

        return fn

    def omega_step_objective(V_):
        t = a @ V_

        def fn(o):
            r = t * (n - b @ o)
            val = float(np.sum(w * _penalty(r)) / wsum)
            grad = -((w * _penalty_derivative(r) / wsum) * t) @ b
            return val, grad

        return fn

    cfg = problem.optimizer_cfg
    reports: list[SolveReport] = []
    current = value_at(V, Omega)
    outer_trace = [current]
    rounds = 0
    for _ in range(problem.max_outer_rounds):
        rep_v = minimize_on_sphere(v_step_objective(Omega), V, cfg)
        V = rep_v.x_final / np.linalg.norm(rep_v.x_final)
        reports.append(rep_v)
        rep_o = minimize(omega_step_objective(V), Omega, cfg)
        Omega = rep_o.x_final
        reports.append(rep_o)
        rounds += 1
        new_value = value_at(V, Omega)
        outer_trace.append(new_value)
        changed = abs(current - new_value)
        current = new_value
        # a nonpositive round value means every sample sits on the smoothed
        # penalty's satisfied plateau, so the floor-at-zero check stops here
        if max(current, 0.0) < cfg.objective_tolerance:
            break
        if changed < problem.outer_tolerance:
            break

    final_value, _, _ = objective(fld, CameraMotion(V=V, Omega=Omega))
    return PoseEstimate(
        motion=CameraMotion(V=V, Omega=Omega),
        objective_value=final_value,
        report=reports,
        rounds=rounds,
        outer_trace=outer_trace,
    )
