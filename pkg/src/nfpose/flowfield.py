"""Normal-flow fields.

A normal-flow sample is the locally observable part of image motion: the
component along the intensity gradient. This module estimates samples from
image derivatives, synthesizes them from known motion and depth, projects
full optical flow onto gradients, injects calibrated noise, and persists
fields to CSV with a JSON sidecar.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import EmptyField, ZeroGradient
from .geometry import CameraIntrinsics, CameraMotion, ImagePoint, pixel_to_normalized


@dataclass(frozen=True)
class FlowSample:
    point: ImagePoint
    g: np.ndarray  # unit 2-vector, gradient direction
    n: float  # scalar normal flow, normalized-coordinate units / frame
    weight: float = 1.0

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(2)
        object.__setattr__(self, "g", g)
        if abs(np.linalg.norm(g) - 1.0) > 1e-9:
            raise ValueError("gradient direction must be unit length")
        if not np.isfinite(self.n):
            raise ValueError("normal flow magnitude must be finite")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")


@dataclass
class NormalFlowField:
    samples: list[FlowSample]
    frame_pair: tuple[int, int] = (0, 1)

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("field needs at least one sample")
        seen = set()
        for s in self.samples:
            key = (s.point.x, s.point.y)
            if key in seen:
                raise ValueError(f"duplicate sample point {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(points Nx2, gradients Nx2, magnitudes N, weights N) as arrays."""
        pts = np.array([[s.point.x, s.point.y] for s in self.samples])
        g = np.array([s.g for s in self.samples])
        n = np.array([s.n for s in self.samples])
        w = np.array([s.weight for s in self.samples])
        return pts, g, n, w


@dataclass
class DepthMap:
    Z: np.ndarray  # per-sample depth, scene units, aligned with a sample list

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float).reshape(-1)
        object.__setattr__(self, "Z", Z)
        if np.any(Z <= 0):
            raise ValueError("depths must be positive")


@dataclass
class ImagePairDerivatives:
    Ix: np.ndarray
    Iy: np.ndarray
    It: np.ndarray

    def __post_init__(self):
        for name in ("Ix", "Iy", "It"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.Ix.shape == self.Iy.shape == self.It.shape):
            raise ValueError("derivative rasters must have equal dimensions")
        if not all(np.all(np.isfinite(r)) for r in (self.Ix, self.Iy, self.It)):
            raise ValueError("derivative rasters must be finite")


def motion_coefficients(points: np.ndarray, gradients: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample 3-vectors a, b with n = (a.V)/Z + b.Omega.

    a = A^T g and b = B^T g for the per-point interaction matrices, vectorized
    over the field.
    """
    x, y = points[:, 0], points[:, 1]
    gx, gy = gradients[:, 0], gradients[:, 1]
    a = np.stack([-gx, -gy, gx * x + gy * y], axis=1)
    b = np.stack(
        [
            gx * (x * y) + gy * (y**2 + 1.0),
            gx * (-(x**2 + 1.0)) + gy * (-x * y),
            gx * y - gy * x,
        ],
        axis=1,
    )
    return a, b


def normal_flow_from_derivatives(
    d: ImagePairDerivatives, K: CameraIntrinsics, grad_threshold: float = 0.05
) -> NormalFlowField:
    """One sample per pixel whose spatial gradient magnitude passes the threshold.

    Gradient direction and flow magnitude are expressed in normalized
    coordinates: the anisotropic pixel-to-normalized scaling multiplies the
    gradient by (fx, fy) before renormalization.
    """
    if grad_threshold <= 0:
        raise ValueError("grad_threshold must be positive")
    rows, cols = d.Ix.shape
    samples = []
    for r in range(rows):
        for c in range(cols):
            gpix = np.array([d.Ix[r, c], d.Iy[r, c]])
            if np.linalg.norm(gpix) < grad_threshold:
                continue
            gnorm_vec = np.array([K.fx * gpix[0], K.fy * gpix[1]])
            scale = np.linalg.norm(gnorm_vec)
            samples.append(
                FlowSample(
                    point=pixel_to_normalized(float(c), float(r), K),
                    g=gnorm_vec / scale,
                    n=float(-d.It[r, c] / scale),
                )
            )
    if not samples:
        raise EmptyField("no pixel passes the gradient threshold")
    return NormalFlowField(samples=samples)


def synthesize_normal_flow(
    motion: CameraMotion,
    depths: DepthMap,
    points: np.ndarray,
    gradients: np.ndarray,
    frame_pair: tuple[int, int] = (0, 1),
    weights: np.ndarray | None = None,
) -> NormalFlowField:
    """Forward model: n = (1/Z)(g.A)V + (g.B)Omega per sample."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    gradients = np.asarray(gradients, dtype=float).reshape(-1, 2)
    if weights is None:
        weights = np.ones(len(points))
    a, b = motion_coefficients(points, gradients)
    n = (a @ motion.V) / depths.Z + b @ motion.Omega
    samples = [
        FlowSample(
            point=ImagePoint(x=float(p[0]), y=float(p[1])),
            g=gradients[i],
            n=float(n[i]),
            weight=float(weights[i]),
        )
        for i, p in enumerate(points)
    ]
    return NormalFlowField(samples=samples, frame_pair=frame_pair)


def project_optical_flow(u: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, float]:
    """Project full flow u onto the gradient direction.

    Returns (vector form ((u.grad)/|grad|^2) grad, scalar magnitude u.g).
    """
    u = np.asarray(u, dtype=float).reshape(2)
    grad = np.asarray(grad, dtype=float).reshape(2)
    norm = np.linalg.norm(grad)
    if norm == 0.0:
        raise ZeroGradient("cannot project onto a zero gradient")
    vec = (float(u @ grad) / norm**2) * grad
    return vec, float(u @ (grad / norm))


def inject_noise(field: NormalFlowField, epsilon_pct: float, seed: int) -> NormalFlowField:
    """Additive uniform noise on the scalar flow only; gradients unchanged.

    The bound is (epsilon_pct/100) * mean(|n|) over the field. Each sample's
    draw comes from its own generator keyed by (seed, sample index), so the
    result is independent of evaluation order.
    """
    if epsilon_pct < 0:
        raise ValueError("epsilon_pct must be nonnegative")
    if epsilon_pct == 0:
        return NormalFlowField(samples=list(field.samples), frame_pair=field.frame_pair)
    bound = (epsilon_pct / 100.0) * float(np.mean([abs(s.n) for s in field.samples]))
    out = []
    for i, s in enumerate(field.samples):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        delta = rng.uniform(-bound, bound)
        out.append(FlowSample(point=s.point, g=s.g, n=s.n + delta, weight=s.weight))
    return NormalFlowField(samples=out, frame_pair=field.frame_pair)


# ---------------------------------------------------------------------------
# Persistence: CSV with header x,y,gx,gy,n,weight plus a JSON sidecar.

def _sidecar_path(csv_path: str) -> str:
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def save_field(
    field: NormalFlowField, csv_path: str, intrinsics: CameraIntrinsics | None = None
) -> None:
    lines = ["x,y,gx,gy,n,weight"]
    for s in field.samples:
        lines.append(
            ",".join(
                format(v, ".17g")
                for v in (s.point.x, s.point.y, s.g[0], s.g[1], s.n, s.weight)
            )
        )
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    sidecar = {
        "frame_pair": list(field.frame_pair),
        "intrinsics": None
        if intrinsics is None
        else {"fx": intrinsics.fx, "fy": intrinsics.fy, "cx": intrinsics.cx, "cy": intrinsics.cy},
    }
    with open(_sidecar_path(csv_path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_field(csv_path: str) -> tuple[NormalFlowField, CameraIntrinsics | None]:
    with open(csv_path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "x,y,gx,gy,n,weight":
        raise ValueError(f"{csv_path}: missing flow-field CSV header")
    samples = []
    for ln in lines[1:]:
        x, y, gx, gy, n, w = (float(tok) for tok in ln.split(","))
        samples.append(FlowSample(point=ImagePoint(x, y), g=np.array([gx, gy]), n=n, weight=w))
    frame_pair = (0, 1)
    intrinsics = None
    sidecar = _sidecar_path(csv_path)
    if os.path.exists(sidecar):
        with open(sidecar, encoding="utf-8") as fh:
            meta = json.load(fh)
        frame_pair = tuple(meta.get("frame_pair", (0, 1)))
        if meta.get("intrinsics"):
            intrinsics = CameraIntrinsics(**meta["intrinsics"])
    return NormalFlowField(samples=samples, frame_pair=frame_pair), intrinsics
