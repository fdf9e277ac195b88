"""Matplotlib figure rendering for calibration reports and batch summaries.

Uses the Agg backend and strips the PNG Software chunk so output files are
byte-identical across runs of the same inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from evcalib.calibration import CalibrationReport
from evcalib.core import TrajectoryPose, VelocitySeries

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _save(fig, path) -> None:
    fig.savefig(Path(path), format="png", **_SAVE_KW)
    plt.close(fig)


def plot_trace_curve(report: CalibrationReport, path) -> None:
    """Correlation-vs-lag curve with the selected offset marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(report.curve.lags):
        ax.plot(report.curve.lags, report.curve.values, color="tab:blue", lw=1.5)
    ax.axvline(report.t_d, color="tab:red", ls="--", lw=1.0, label=f"t_d = {report.t_d:.4f} s")
    ax.set_xlabel("lag [s]")
    ax.set_ylabel("trace correlation")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_headings(series: VelocitySeries, path) -> None:
    """Per-axis direction components over time."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for idx, label in enumerate(("dx", "dy", "dz")):
        ax.plot(series.t, series.directions[:, idx], lw=1.0, label=label)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("direction component")
    ax.set_ylim(-1.1, 1.1)
    ax.legend(loc="upper right", ncols=3)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_trajectories(body: list[TrajectoryPose], camera: list[TrajectoryPose], path) -> None:
    """Top-down view of the two integrated trajectories."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for poses, label, color in ((body, "body", "tab:blue"), (camera, "camera", "tab:orange")):
        if poses:
            xy = np.array([p.position[:2] for p in poses])
            ax.plot(xy[:, 0], xy[:, 1], lw=1.2, color=color, label=label)
            ax.plot(xy[0, 0], xy[0, 1], "o", ms=4, color=color)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_batch(rows: list[tuple[str, str, float, float, float]], path) -> None:
    """Grouped quartile summary: one marker per (group, method) with p25-p75 bars."""
    groups = sorted({r[0] for r in rows})
    methods = sorted({r[1] for r in rows})
    colors = {m: c for m, c in zip(methods, ("tab:blue", "tab:orange", "tab:green", "tab:red"))}
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(groups) * max(1, len(methods))), 4))
    width = 0.8 / max(1, len(methods))
    for mi, method in enumerate(methods):
        xs, med, lo, hi = [], [], [], []
        for gi, group in enumerate(groups):
            for r in rows:
                if r[0] == group and r[1] == method:
                    xs.append(gi + (mi - (len(methods) - 1) / 2) * width)
                    lo.append(r[2])
                    med.append(r[3])
                    hi.append(r[4])
        if not xs:
            continue
        med_a = np.array(med)
        err = np.array([med_a - np.array(lo), np.array(hi) - med_a])
        ax.errorbar(xs, med_a, yerr=np.clip(err, 0.0, None), fmt="o", ms=4,
                    capsize=3, lw=1.0, color=colors.get(method), label=method)
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups, rotation=30, ha="right")
    ax.set_ylabel("rotation error [deg]")
    ax.set_yscale("log")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3, which="both")
    fig.tight_layout()
    _save(fig, path)
