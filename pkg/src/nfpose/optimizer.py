"""Quasi-Newton minimization: L-BFGS with a strong Wolfe line search.

Both the unconstrained solver and the unit-sphere variant record, for every
accepted step, the quantities needed to verify the Wolfe conditions after the
fact (step length, endpoint objective values, endpoint directional
derivatives). The sphere variant optimizes through the retraction
r(alpha) = (x + alpha d)/|x + alpha d| with tangent-projected gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NonFiniteObjective

GRADIENT_VANISH_NORM = 1e-14
CURVATURE_PAIR_GUARD = 1e-10  # skip history pairs with s.y below this relative bound


class Termination(Enum):
    ObjectiveTolerance = "ObjectiveTolerance"
    MaxIterations = "MaxIterations"
    GradientVanished = "GradientVanished"
    LineSearchFailed = "LineSearchFailed"


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    max_iterations: int = 300
    objective_tolerance: float = 1e-20
    gradient_clip_norm: float = 100.0
    line_search_max_steps: int = 100
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0):
            raise ValueError("need 0 < c1 < c2 < 1")
        if min(self.memory, self.max_iterations, self.line_search_max_steps) <= 0:
            raise ValueError("counts must be positive")
        if self.gradient_clip_norm <= 0 or self.objective_tolerance < 0:
            raise ValueError("invalid tolerance or clip norm")


@dataclass(frozen=True)
class WolfeRecord:
    """Endpoint data of one accepted line-search step."""

    alpha: float
    f0: float
    f_alpha: float
    slope0: float  # phi'(0), directional derivative along the search direction
    slope_alpha: float  # phi'(alpha)


@dataclass
class SolveReport:
    x_final: np.ndarray
    f_final: float
    iterations: int
    termination: Termination
    objective_trace: list[float] = field(default_factory=list)
    wolfe_records: list[WolfeRecord] = field(default_factory=list)


def _clip_gradient(g: np.ndarray, clip_norm: float) -> np.ndarray:
    norm = np.linalg.norm(g)
    if norm > clip_norm:
        return g * (clip_norm / norm)
    return g


def _two_loop_direction(g: np.ndarray, history: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in reversed(history):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if history:
        s, y = history[-1]
        q *= float(s @ y) / float(y @ y)  # standard initial Hessian scaling
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _strong_wolfe(phi, f0: float, slope0: float, cfg: OptimizerConfig):
    """Bracket-and-zoom strong Wolfe search on phi(alpha) -> (f, slope, payload).

    Returns (alpha, f, slope, payload) or None when the evaluation budget is
    spent without an acceptable step. phi must return the objective, its
    directional derivative, and an arbitrary payload (the evaluated point).
    """
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    budget = cfg.line_search_max_steps
    evals = 0

    # bracketing stage
    alpha_prev, f_prev, slope_prev = 0.0, f0, slope0
    alpha = 1.0
    bracket = None
    while evals < budget:
        evals += 1
        f, slope, payload = phi(alpha)
        if not np.isfinite(f):
            bracket = (alpha_prev, f_prev, slope_prev, alpha, np.inf, np.nan)
            break
        if f > f0 + c1 * alpha * slope0 or (alpha_prev > 0.0 and f >= f_prev):
            bracket = (alpha_prev, f_prev, slope_prev, alpha, f, slope)
            break
        if abs(slope) <= -c2 * slope0:
            return alpha, f, slope, payload
        if slope >= 0.0:
            bracket = (alpha, f, slope, alpha_prev, f_prev, slope_prev)
            break
        alpha_prev, f_prev, slope_prev = alpha, f, slope
        alpha *= 2.0
    if bracket is None:
        return None

    # zoom stage: quadratic interpolation with bisection fallback
    lo, f_lo, slope_lo, hi, f_hi, _ = bracket
    while evals < budget:
        evals += 1
        width = hi - lo
        if abs(width) < 1e-16 * max(1.0, abs(lo)):
            return None
        # one-sided quadratic model through (lo, f_lo, slope_lo) and (hi, f_hi)
        trial = None
        if np.isfinite(f_hi):
            denom = 2.0 * (f_hi - f_lo - slope_lo * width)
            if denom != 0.0:
                trial = lo - slope_lo * width**2 / denom
        mid = lo + 0.5 * width
        if trial is None or not np.isfinite(trial):
            trial = mid
        else:
            # keep the trial safely inside the bracket
            lo_b, hi_b = (lo, hi) if lo < hi else (hi, lo)
            margin = 0.1 * abs(width)
            trial = min(max(trial, lo_b + margin), hi_b - margin)
        f, slope, payload = phi(trial)
        if not np.isfinite(f) or f > f0 + c1 * trial * slope0 or f >= f_lo:
            hi, f_hi = trial, f
            continue
        if abs(slope) <= -c2 * slope0:
            return trial, f, slope, payload
        if slope * width >= 0.0:
            hi, f_hi = lo, f_lo
        lo, f_lo, slope_lo = trial, f, slope
    return None


def _run_lbfgs(x0, eval_at, retract, project, cfg: OptimizerConfig) -> SolveReport:
    """Shared driver. eval_at(x) -> (f, raw gradient); project maps a gradient
    or direction into the admissible subspace at x; retract maps (x, d, alpha)
    to the next iterate and the line-search slope machinery."""
    x = np.asarray(x0, dtype=float).copy()
    f, g_raw = eval_at(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g_raw)):
        raise NonFiniteObjective("objective not finite at the start point")
    trace = [float(f)]
    records: list[WolfeRecord] = []
    history: list[tuple[np.ndarray, np.ndarray]] = []
    g = project(x, _clip_gradient(g_raw, cfg.gradient_clip_norm))
    iterations = 0
    termination = Termination.MaxIterations

    while iterations < cfg.max_iterations:
        if abs(f) < cfg.objective_tolerance:
            termination = Termination.ObjectiveTolerance
            break
        if np.linalg.norm(g) < GRADIENT_VANISH_NORM:
            termination = Termination.GradientVanished
            break

        d = project(x, _two_loop_direction(g, history))
        slope0 = float(g @ d)
        tried_steepest = slope0 >= 0.0
        if tried_steepest:
            d = -g
            slope0 = float(g @ d)

        def phi(alpha, x=x, d=d):
            x_new, slope_scale = retract(x, d, alpha)
            f_new, g_new_raw = eval_at(x_new)
            slope = float(project(x_new, g_new_raw) @ d) * slope_scale(x_new)
            return f_new, slope, (x_new, g_new_raw)

        result = _strong_wolfe(phi, f, slope0, cfg)
        if result is None and not tried_steepest:
            # one steepest-descent retry before giving up
            d = -g
            slope0 = float(g @ d)
            result = _strong_wolfe(phi, f, slope0, cfg)
        if result is None:
            termination = Termination.LineSearchFailed
            break

        alpha, f_new, slope_alpha, (x_new, g_new_raw) = result
        records.append(
            WolfeRecord(alpha=alpha, f0=float(f), f_alpha=float(f_new),
                        slope0=slope0, slope_alpha=slope_alpha)
        )
        g_new = project(x_new, _clip_gradient(g_new_raw, cfg.gradient_clip_norm))
        s = x_new - x
        y = g_new - g
        # curvature guard keeps the inverse-Hessian model positive definite
        if float(s @ y) > CURVATURE_PAIR_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y))
            if len(history) > cfg.memory:
                history.pop(0)
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        iterations += 1

    return SolveReport(
        x_final=x,
        f_final=float(f),
        iterations=iterations,
        termination=termination,
        objective_trace=trace,
        wolfe_records=records,
    )


def minimize(f, x0: np.ndarray, cfg: OptimizerConfig | None = None) -> SolveReport:
    """Unconstrained L-BFGS. f(x) must return (value, gradient)."""
    cfg = cfg or OptimizerConfig()

    def eval_at(x):
        val, grad = f(x)
        return float(val), np.asarray(grad, dtype=float)

    def project(x, v):
        return v

    def retract(x, d, alpha):
        return x + alpha * d, lambda x_new: 1.0

    return _run_lbfgs(x0, eval_at, retract, project, cfg)


def minimize_on_sphere(f, x0: np.ndarray, cfg: OptimizerConfig | None = None) -> SolveReport:
    """L-BFGS on the unit sphere: tangent-projected gradients, normalizing
    retraction after every line-search step."""
    cfg = cfg or OptimizerConfig()
    x0 = np.asarray(x0, dtype=float)
    if abs(np.linalg.norm(x0) - 1.0) > 1e-9:
        raise ValueError("start point must be on the unit sphere")

    def eval_at(x):
        val, grad = f(x)
        return float(val), np.asarray(grad, dtype=float)

    def project(x, v):
        return v - float(v @ x) * x

    def retract(x, d, alpha):
        z = x + alpha * d
        norm = np.linalg.norm(z)
        x_new = z / norm
        # chain rule through the normalization: d phi/d alpha at the new point
        # is grad_projected . d divided by |x + alpha d|
        return x_new, lambda x_n, norm=norm: 1.0 / norm

    return _run_lbfgs(x0, eval_at, retract, project, cfg)
