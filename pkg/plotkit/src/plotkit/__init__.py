"""Comparison figures for gas-network trajectory CSV files.

plotkit is deliberately decoupled from any simulator: it consumes plain
CSV artifacts (a solution trajectory, a reference trajectory, and a
sampled target-value table) and renders a three-panel SVG comparing the
two trajectories, with the integrated relative error in the last panel.
"""

from .errors import common_grid, relative_error_series
from .figure import render
from .io import SchemaError, read_targets, read_trajectory

__all__ = [
    "SchemaError",
    "common_grid",
    "read_targets",
    "read_trajectory",
    "relative_error_series",
    "render",
]

__version__ = "0.1.0"
