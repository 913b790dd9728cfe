"""Integrated relative error between two time series.

The error at time t is the integral of (solution - reference) up to t
divided by the integral of the reference up to t, both trapezoidal on
the common grid.  The two trajectories may live on different grids; the
finer one is used as the common grid and the coarser series is linearly
interpolated onto it.
"""

from __future__ import annotations

import numpy as np


def relative_error_series(sol: np.ndarray, ref: np.ndarray,
                          grid: np.ndarray) -> np.ndarray:
    sol = np.asarray(sol, dtype=float)
    ref = np.asarray(ref, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if not (sol.shape == ref.shape == grid.shape):
        raise ValueError("series and grid lengths differ")
    dt = np.diff(grid)
    diff = sol - ref
    num = np.concatenate(([0.0],
                          np.cumsum(0.5 * dt * (diff[1:] + diff[:-1]))))
    den = np.concatenate(([0.0],
                          np.cumsum(0.5 * dt * (ref[1:] + ref[:-1]))))
    scale = np.max(np.abs(ref)) * (grid[-1] - grid[0])
    if np.any(np.abs(den[1:]) <= 1e-14 * max(scale, 1e-300)):
        raise ZeroDivisionError(
            "time-integrated reference vanishes; relative error undefined"
        )
    out = np.empty_like(num)
    out[0] = 0.0
    out[1:] = num[1:] / den[1:]
    return out


def common_grid(t_sol: np.ndarray, t_ref: np.ndarray) -> np.ndarray:
    """The finer of the two grids; ties go to the solution grid."""
    return t_sol if len(t_sol) >= len(t_ref) else t_ref


def error_on_common_grid(t_sol, sol, t_ref, ref):
    """(grid, error series) for two series on possibly different grids."""
    grid = common_grid(np.asarray(t_sol, float), np.asarray(t_ref, float))
    s = np.interp(grid, t_sol, sol)
    r = np.interp(grid, t_ref, ref)
    return grid, relative_error_series(s, r, grid)
