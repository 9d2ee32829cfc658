"""Figure rendering for experiment artifacts.

Every function here draws one figure and writes it to a file; nothing
is shown interactively.  The Agg backend is forced so the renderers
work in headless environments, and figures are closed after saving so
batch runs do not accumulate state.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trail import Trail

__all__ = [
    "save_trajectory_figure",
    "save_offset_figure",
    "save_scale_figure",
    "save_training_figure",
    "save_gradcheck_figure",
]

_DPI = 120


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def _edge_band(trail: Trail, n: int = 400):
    """Left and right corridor edges, sampled along the arc."""
    s = np.linspace(0.0, trail.length, n)
    pts = np.array([trail.point_at(v) for v in s])
    heads = np.array([trail.heading_at(v) for v in s])
    normals = np.column_stack([-np.sin(heads), np.cos(heads)])
    half = trail.width / 2.0
    return pts + half * normals, pts - half * normals, pts


def save_trajectory_figure(trail: Trail, logs: dict, path) -> None:
    """Top-down view: corridor edges, centerline, and one path per run."""
    left, right, center = _edge_band(trail)
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    ax.plot(center[:, 0], center[:, 1], "k--", lw=0.8, label="centerline")
    ax.plot(left[:, 0], left[:, 1], "k-", lw=0.6, alpha=0.5)
    ax.plot(right[:, 0], right[:, 1], "k-", lw=0.6, alpha=0.5)
    for name, log in logs.items():
        xy = np.array([r.pose.position[:2] for r in log.records])
        ax.plot(xy[:, 0], xy[:, 1], lw=1.2, label=name)
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def save_offset_figure(logs: dict, path, disturbances=(),
                       recovery_band: float | None = None) -> None:
    """Signed lateral offset over time, with disturbance windows shaded."""
    fig, ax = plt.subplots(figsize=(8.0, 3.5))
    for d in disturbances:
        ax.axvspan(d.start, d.end, color="0.85", zorder=0)
    if recovery_band is not None:
        ax.axhline(recovery_band, color="0.4", lw=0.6, ls=":")
        ax.axhline(-recovery_band, color="0.4", lw=0.6, ls=":")
    for name, log in logs.items():
        t = [r.t for r in log.records]
        d = [r.rel.lateral_offset for r in log.records]
        ax.plot(t, d, lw=1.2, label=name)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("lateral offset [m]")
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def save_scale_figure(trials: list, truths: list, path,
                      settle_after: int = 20, tolerance: float = 0.05) -> None:
    """Relative error of the running distance estimate per accepted pair.

    ``trials`` holds one (t, estimate-or-None) series per trial; each is
    plotted against its own ground truth so trials are comparable.
    """
    fig, ax = plt.subplots(figsize=(8.0, 3.5))
    for k, (series, truth) in enumerate(zip(trials, truths)):
        idx = [i for i, (_, est) in enumerate(series) if est is not None]
        err = [abs(series[i][1] - truth) / truth for i in idx]
        ax.plot(idx, err, lw=1.0, label=f"trial {k}")
    ax.axhline(tolerance, color="r", lw=0.8, ls="--", label=f"{tolerance:.0%}")
    ax.axvline(settle_after, color="0.4", lw=0.8, ls=":")
    ax.set_yscale("log")
    ax.set_xlabel("accepted pair")
    ax.set_ylabel("relative error")
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def save_training_figure(histories: dict, path) -> None:
    """Loss versus epoch for each training stage."""
    fig, ax = plt.subplots(figsize=(8.0, 3.5))
    for name, hist in histories.items():
        ax.plot(range(len(hist)), hist, lw=1.2, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def save_gradcheck_figure(rel_errors, path) -> None:
    """Histogram of per-instance gradient relative errors (log10)."""
    errs = np.asarray(rel_errors, dtype=float)
    logs = np.log10(np.maximum(errs, 1e-300))
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.hist(logs, bins=40, color="tab:blue", alpha=0.8)
    ax.set_xlabel("log10 relative error")
    ax.set_ylabel("count")
    _save(fig, path)
