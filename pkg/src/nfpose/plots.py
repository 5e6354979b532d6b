"""Figure rendering for the CLI report paths.

Every function draws to a file and closes the figure; nothing here opens a
window, so the module forces the Agg backend before pyplot loads.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .geometry import Trajectory


def save_robustness_curves(
    eps_values: list[float],
    t_rel_by_eps: dict[float, list[float]],
    r_rel_by_eps: dict[float, list[float]],
    out_path: str,
) -> None:
    """Median RPE vs noise level, one panel per metric, quartile band."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, data, label in (
        (axes[0], t_rel_by_eps, "t_rel"),
        (axes[1], r_rel_by_eps, "r_rel"),
    ):
        med = [np.median(data[e]) for e in eps_values]
        q1 = [np.percentile(data[e], 25) for e in eps_values]
        q3 = [np.percentile(data[e], 75) for e in eps_values]
        ax.plot(eps_values, med, "o-", color="tab:blue")
        ax.fill_between(eps_values, q1, q3, alpha=0.25, color="tab:blue")
        ax.set_xlabel("noise level (%)")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def save_loss_curves(losses_by_pair: dict[int, list[float]], out_path: str) -> None:
    """Refinement loss vs step for each frame pair, log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for pair_idx in sorted(losses_by_pair):
        ax.semilogy(losses_by_pair[pair_idx], label=f"pair {pair_idx}")
    ax.set_xlabel("refinement step")
    ax.set_ylabel("upper-level loss")
    ax.grid(True, alpha=0.3)
    if len(losses_by_pair) <= 10:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def save_trajectory_overlay(
    estimated: Trajectory, reference: Trajectory, out_path: str
) -> None:
    """Top-down (x, z) view of both trajectories."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for traj, style, label in (
        (reference, "k-", "reference"),
        (estimated, "b--", "estimated"),
    ):
        T = traj.translations()
        ax.plot(T[:, 0], T[:, 2], style, label=label)
        ax.plot(T[0, 0], T[0, 2], "o", color=style[0])
    ax.set_xlabel("x")
    ax.set_ylabel("z")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
