"""Bi-level pose refinement.

The upper level scores a coarse pose by how well the flow it implies matches
the measured normal flow, using per-sample inverse depths implied by a
refined pose from the depth-positivity solver (the lower level). A generic
differentiable-argmin layer computes lower-level sensitivities by implicit
differentiation; the refinement loop itself differentiates the upper loss
directly, treating the solved pose as a constant, which is the coupling the
source training scheme induces.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .cheirality import CheiralityProblem, solve_pose
from .errors import AllSamplesDegenerate, SingularHessian
from .flowfield import NormalFlowField, motion_coefficients
from .geometry import CameraMotion
from .optimizer import OptimizerConfig, minimize

DEGENERATE_TRANSLATION_FLOOR = 1e-9


@dataclass(frozen=True)
class CoarsePose:
    """Free 6-parameter pose (V_c, Omega_c); the learnable quantity."""

    V: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float).reshape(3))
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.V)) and np.all(np.isfinite(self.Omega))):
            raise ValueError("coarse pose must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.V, self.Omega])

    @staticmethod
    def from_vector(p: np.ndarray) -> "CoarsePose":
        p = np.asarray(p, dtype=float).reshape(6)
        return CoarsePose(V=p[:3], Omega=p[3:])


@dataclass(frozen=True)
class RefinedPose:
    """Lower-level output; |V| = 1."""

    V: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float).reshape(3))
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float).reshape(3))
        if abs(np.linalg.norm(self.V) - 1.0) > 1e-9:
            raise ValueError("refined pose must have unit translation direction")


def refinement_loss(
    pc: CoarsePose, pr: RefinedPose, field: NormalFlowField
) -> tuple[float, np.ndarray]:
    """Consistency between measured flow and the coarse pose's model flow.

    Per sample, the refined pose supplies the inverse depth
    zeta = (n - b.Omega_r)/(a.V_r); the coarse pose's model flow is
    m = zeta (a.V_c) + b.Omega_c, and the loss is the mean squared residual
    (n - m)^2. Samples whose refined translational component |a.V_r| is
    below 1e-9 carry no depth information and are excluded.

    Returns (value, gradient w.r.t. the 6 coarse parameters).
    """
    pts, g, n, _ = field.arrays()
    a, b = motion_coefficients(pts, g)
    t_r = a @ pr.V
    keep = np.abs(t_r) >= DEGENERATE_TRANSLATION_FLOOR
    if not np.any(keep):
        raise AllSamplesDegenerate("no sample has a usable refined translational component")
    a = a[keep]
    b = b[keep]
    n = n[keep]
    zeta = (n - b @ pr.Omega) / t_r[keep]
    m = zeta * (a @ pc.V) + b @ pc.Omega
    resid = n - m
    count = resid.size
    value = float(np.mean(resid**2))
    grad_v = (-2.0 / count) * ((resid * zeta) @ a)
    grad_omega = (-2.0 / count) * (resid @ b)
    return value, np.concatenate([grad_v, grad_omega])


@dataclass
class ArgminLayer:
    """Differentiable argmin of a parameterized lower objective L(z; theta).

    The callables must provide analytic first and second derivatives:
    value(z, theta) -> scalar, grad_z(z, theta) -> (dim_z,),
    hess_zz(z, theta) -> (dim_z, dim_z), hess_ztheta(z, theta)
    -> (dim_z, dim_theta).
    """

    value: callable
    grad_z: callable
    hess_zz: callable
    hess_ztheta: callable
    solver: OptimizerConfig = dataclass_field(default_factory=OptimizerConfig)

    STATIONARITY_TOL = 1e-8
    CONDITION_LIMIT = 1e12

    def solve(self, theta: np.ndarray, z0: np.ndarray) -> np.ndarray:
        report = minimize(lambda z: (self.value(z, theta), self.grad_z(z, theta)), z0, self.solver)
        z = report.x_final
        # the line search bottoms out near sqrt(eps) in the objective, which
        # can leave the gradient above the stationarity the layer promises;
        # polish with Newton steps since analytic Hessians are available
        for _ in range(20):
            g = np.asarray(self.grad_z(z, theta), dtype=float)
            if np.linalg.norm(g) < 1e-12:
                break
            try:
                step = np.linalg.solve(np.asarray(self.hess_zz(z, theta), dtype=float), g)
            except np.linalg.LinAlgError:
                break
            z = z - step
        return z


def implicit_gradient(layer: ArgminLayer, z_star: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Sensitivity dz*/dtheta = -[d2L/dz2]^{-1} d2L/dz dtheta at a minimizer.

    Only derivatives at the solved point are needed; nothing is
    backpropagated through the iterations that produced it.
    """
    z_star = np.asarray(z_star, dtype=float)
    theta = np.asarray(theta, dtype=float)
    grad_norm = float(np.linalg.norm(layer.grad_z(z_star, theta)))
    if grad_norm >= layer.STATIONARITY_TOL:
        raise ValueError(f"z_star is not stationary: |grad| = {grad_norm:.3e}")
    H = np.asarray(layer.hess_zz(z_star, theta), dtype=float)
    cond = float(np.linalg.cond(H))
    if cond > layer.CONDITION_LIMIT:
        raise SingularHessian(cond)
    C = np.asarray(layer.hess_ztheta(z_star, theta), dtype=float)
    return -np.linalg.solve(H, C)


def refine(
    pc0: CoarsePose,
    field: NormalFlowField,
    steps: int,
    step_size: float,
    optimizer_cfg: OptimizerConfig | None = None,
) -> tuple[list[CoarsePose], list[float]]:
    """Gradient refinement of a coarse pose against the lower-level solver.

    Each step solves the depth-positivity problem from the current coarse
    pose, evaluates the consistency loss and its gradient with the solved
    pose held fixed, and takes one gradient step. Returns the coarse-pose
    trajectory (steps+1 entries) and the loss at every visited pose
    (steps+1 entries, the last one evaluated after the final update).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = optimizer_cfg or OptimizerConfig()
    history = [pc0]
    losses: list[float] = []
    pc = pc0
    for _ in range(steps):
        estimate = solve_pose(
            CheiralityProblem(field=field, init=CameraMotion(V=pc.V, Omega=pc.Omega),
                              optimizer_cfg=cfg)
        )
        pr = RefinedPose(V=estimate.motion.V, Omega=estimate.motion.Omega)
        value, grad = refinement_loss(pc, pr, field)
        losses.append(value)
        pc = CoarsePose.from_vector(pc.as_vector() - step_size * grad)
        history.append(pc)
    estimate = solve_pose(
        CheiralityProblem(field=field, init=CameraMotion(V=pc.V, Omega=pc.Omega),
                          optimizer_cfg=cfg)
    )
    pr = RefinedPose(V=estimate.motion.V, Omega=estimate.motion.Omega)
    value, _ = refinement_loss(pc, pr, field)
    losses.append(value)
    return history, losses
