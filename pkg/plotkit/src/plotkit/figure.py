"""Three-panel comparison figure: pressures, flows, integrated errors."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import error_on_common_grid
from .io import Trajectory

_PRESSURE_TARGETS = ("p_in_min", "p_in_max", "p_out_min", "p_out_max")
_FLOW_TARGETS = ("q_max", "q_min")

_H = 3600.0


def _step_overlay(ax, targets: Trajectory, names) -> None:
    for col in targets.kinds(*names):
        values = targets.columns[col]
        finite = np.isfinite(values)
        if not finite.any():
            continue
        # schedules are right continuous: hold each sample until the next
        ax.step(targets.times / _H, values, where="post", linestyle=":",
                linewidth=1.0, alpha=0.8, label=col)


def _series_panel(ax, sol: Trajectory, ref: Trajectory, kinds, unit) -> None:
    for col in sol.kinds(*kinds):
        ax.plot(sol.times / _H, sol.columns[col], linewidth=1.4, label=col)
    for col in ref.kinds(*kinds):
        ax.plot(ref.times / _H, ref.columns[col], linewidth=1.0,
                linestyle="--", alpha=0.7, label=f"{col} (ref)")
    ax.set_ylabel(unit)
    ax.grid(True, alpha=0.3)


def end_errors(sol: Trajectory, ref: Trajectory) -> dict[str, float]:
    """End-of-horizon integrated relative error per comparable column.

    Columns present in both files and carrying a nonvanishing reference
    integral are compared; the rest are skipped silently.
    """
    out = {}
    for col in sol.kinds("p", "q"):
        if col not in ref.columns:
            continue
        try:
            _, e = error_on_common_grid(sol.times, sol.columns[col],
                                        ref.times, ref.columns[col])
        except ZeroDivisionError:
            continue
        out[col] = float(e[-1])
    return out


def render(sol: Trajectory, ref: Trajectory, targets: Trajectory,
           out_path) -> dict[str, float]:
    """Write the three-panel SVG and return the end errors of panel 3."""
    plt.rcParams["svg.hashsalt"] = "plotkit"
    fig, (ax_p, ax_q, ax_e) = plt.subplots(
        3, 1, figsize=(8.0, 9.0), sharex=True,
        gridspec_kw={"hspace": 0.12},
    )

    _series_panel(ax_p, sol, ref, ("p",), "pressure [bar]")
    _step_overlay(ax_p, targets, _PRESSURE_TARGETS)
    ax_p.set_title("solution vs reference")

    _series_panel(ax_q, sol, ref, ("q",), "flow [kg/s]")
    _step_overlay(ax_q, targets, _FLOW_TARGETS)

    ends = {}
    for col in sol.kinds("p", "q"):
        if col not in ref.columns:
            continue
        try:
            grid, e = error_on_common_grid(sol.times, sol.columns[col],
                                           ref.times, ref.columns[col])
        except ZeroDivisionError:
            continue
        ax_e.plot(grid / _H, 100.0 * e, linewidth=1.2,
                  label=f"e({col}), end {100.0 * e[-1]:.3g}%")
        ends[col] = float(e[-1])
    ax_e.set_ylabel("integrated rel. error [%]")
    ax_e.set_xlabel("time [h]")
    ax_e.grid(True, alpha=0.3)

    for ax in (ax_p, ax_q, ax_e):
        ax.legend(loc="best", fontsize=7, ncol=2)

    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return ends
