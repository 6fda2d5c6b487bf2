"""Deterministic CSV output and figure rendering for experiment results.

Floats are written with the ``%.17g`` format, which round-trips IEEE doubles
exactly, so two runs that compute identical numbers produce byte-identical
files.  Wall-clock timings are deliberately absent from every file for the
same reason.  Figures are rendered with the Agg backend straight to PNG next
to the CSVs; they are presentation artifacts and make no determinism
promise.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .controller import ControllerConfig
from .errors import InvalidInputError
from .plant import ClosedLoopLog, SweepReport


def format_float(value) -> str:
    """Decimal form of a double with enough digits to round-trip exactly."""
    v = float(value)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def _fmt_optional(value) -> str:
    return "" if value is None else str(value)


def write_closed_loop_csv(log: ClosedLoopLog, path: str | Path) -> Path:
    """Full per-step trajectory record of one run.

    Columns: step index, applied inputs, measured outputs, plant state,
    tracking cost, excitation diagnostics.  Boolean flags are 0/1, absent
    values are empty fields.  No timing columns.
    """
    if not isinstance(log, ClosedLoopLog):
        raise InvalidInputError("write_closed_loop_csv expects a ClosedLoopLog")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = log.u.shape[1]
    p = log.y.shape[1]
    nx = log.x.shape[1]
    header = (
        ["step"]
        + [f"u{j + 1}" for j in range(m)]
        + [f"y{j + 1}" for j in range(p)]
        + [f"x{j + 1}" for j in range(nx)]
        + [
            "cost",
            "geometry_status",
            "hyperplane_hits_box",
            "branch",
            "v",
            "epsilon_used",
            "excitation_warning",
            "sigma_min",
            "pe_rank",
            "condition_metric",
        ]
    )
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(log.num_steps):
            row = [str(int(log.steps[i]))]
            row += [format_float(v) for v in log.u[i]]
            row += [format_float(v) for v in log.y[i]]
            row += [format_float(v) for v in log.x[i]]
            row.append(format_float(log.cost[i]))
            row.append(_fmt_optional(log.geometry_status[i]))
            hits = log.hyperplane_hits_box[i]
            row.append("" if hits is None else str(int(hits)))
            row.append(_fmt_optional(log.branch[i]))
            row.append(_fmt_optional(log.v[i]))
            row.append(format_float(log.epsilon_used[i]))
            row.append(str(int(log.excitation_warning[i])))
            row.append(format_float(log.sigma_min[i]))
            row.append(str(int(log.pe_rank[i])))
            row.append(format_float(log.condition_metric[i]))
            writer.writerow(row)
    return path


def write_tracking_csv(log: ClosedLoopLog, cfg: ControllerConfig, path: str | Path) -> Path:
    """Plot-ready trajectory data: outputs and inputs next to their setpoints."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = log.u.shape[1]
    p = log.y.shape[1]
    header = ["step"]
    for j in range(p):
        header += [f"y{j + 1}", f"y{j + 1}_setpoint"]
    for j in range(m):
        header += [f"u{j + 1}", f"u{j + 1}_setpoint"]
    header.append("tracking_error")
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(log.num_steps):
            row = [str(int(log.steps[i]))]
            for j in range(p):
                row += [format_float(log.y[i, j]), format_float(cfg.y_setpoint[j])]
            for j in range(m):
                row += [format_float(log.u[i, j]), format_float(cfg.u_setpoint[j])]
            row.append(format_float(np.abs(log.y[i] - cfg.y_setpoint).max()))
            writer.writerow(row)
    return path


def write_sweep_csv(report: SweepReport, path: str | Path) -> Path:
    """Per-cell sweep results, one row per (epsilon, seed) run."""
    if not isinstance(report, SweepReport):
        raise InvalidInputError("write_sweep_csv expects a SweepReport")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [
        "epsilon", "seed", "ok", "mean_tracking_error", "max_tracking_error",
        "pe_fraction", "cond_mean", "cond_min", "cond_max", "failure",
    ]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for cell in report.cells:
            if cell.run_metrics is not None:
                rm = cell.run_metrics
                stats = [
                    format_float(rm.mean_tracking_error),
                    format_float(rm.max_tracking_error),
                    format_float(rm.pe_fraction),
                    format_float(rm.cond_mean),
                    format_float(rm.cond_min),
                    format_float(rm.cond_max),
                ]
            else:
                stats = [""] * 6
            writer.writerow(
                [format_float(cell.epsilon), str(cell.seed), str(int(cell.ok))]
                + stats
                + [cell.failure or ""]
            )
    return path


def write_condition_csv(report: SweepReport, path: str | Path) -> Path:
    """Per-epsilon condition-metric aggregates (the margin-vs-conditioning curve)."""
    if not isinstance(report, SweepReport):
        raise InvalidInputError("write_condition_csv expects a SweepReport")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["epsilon", "cond_mean", "cond_min", "cond_max",
              "mean_tracking_error", "runs", "failures"]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in report.per_epsilon:
            writer.writerow(
                [
                    format_float(row.epsilon),
                    format_float(row.cond_mean),
                    format_float(row.cond_min),
                    format_float(row.cond_max),
                    format_float(row.mean_tracking_error),
                    str(row.runs),
                    str(row.failures),
                ]
            )
    return path


def plot_trajectory(log: ClosedLoopLog, cfg: ControllerConfig, path: str | Path) -> Path:
    """Outputs and inputs against their setpoints over the whole run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_y, ax_u) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    steps = log.steps
    for j in range(log.y.shape[1]):
        ax_y.plot(steps, log.y[:, j], label=f"y{j + 1}")
        ax_y.axhline(cfg.y_setpoint[j], linestyle="--", linewidth=0.8, color="gray")
    ax_y.axvline(log.T, linestyle=":", linewidth=0.8, color="black")
    ax_y.set_ylabel("output")
    ax_y.legend(loc="lower right", fontsize=8)
    for j in range(log.u.shape[1]):
        ax_u.plot(steps, log.u[:, j], label=f"u{j + 1}")
        ax_u.axhline(cfg.u_setpoint[j], linestyle="--", linewidth=0.8, color="gray")
    ax_u.axvline(log.T, linestyle=":", linewidth=0.8, color="black")
    ax_u.set_xlabel("step")
    ax_u.set_ylabel("input")
    ax_u.legend(loc="lower right", fontsize=8)
    mode = log.mode.value
    title = f"closed loop ({mode}, seed {log.seed}, eps {log.epsilon:g})"
    if log.failure:
        title += f" [failed at {log.failed_at_step}]"
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_condition_vs_epsilon(report: SweepReport, path: str | Path) -> Path:
    """Steady-state condition metric against the excitation margin."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    eps = np.array([row.epsilon for row in report.per_epsilon])
    mean = np.array([row.cond_mean for row in report.per_epsilon])
    low = np.array([row.cond_min for row in report.per_epsilon])
    high = np.array([row.cond_max for row in report.per_epsilon])
    fig, ax = plt.subplots(figsize=(7, 5))
    # Failed cells can leave infinite or NaN aggregates; plot what is finite
    # and only log-scale the value axis when something positive remains.
    line = np.isfinite(mean)
    band = np.isfinite(low) & np.isfinite(high)
    ax.plot(eps[line], mean[line], marker="o", label="mean over seeds")
    ax.fill_between(eps[band], low[band], high[band], alpha=0.25, label="min..max")
    if line.any() or band.any():
        ax.set_xscale("log")
    if (mean[line] > 0).any():
        ax.set_yscale("log")
    ax.set_xlabel("excitation margin eps")
    ax.set_ylabel("steady-state window condition number")
    ax.legend()
    ax.set_title(f"conditioning vs margin (case {report.case}, {report.mode.value})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
