"""Readers for the CSV artifacts plotkit consumes.

Trajectory files carry a ``time_s`` column followed by quantity columns
named ``<kind>.<element>`` where kind is ``p`` (node pressure, bar),
``ql``/``qr`` (pipe end flows, kg/s) or ``q`` (regulator flow, kg/s).
Target files carry ``time_s`` followed by ``<target>.<regulator>``
columns sampled on the grid; the underlying schedules are piecewise
constant and right continuous.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

QUANTITY_KINDS = ("p", "ql", "qr", "q")
TARGET_NAMES = ("p_in_min", "p_in_max", "p_out_min", "p_out_max",
                "q_max", "q_min")


class SchemaError(ValueError):
    """A CSV file does not match the expected trajectory/target layout."""


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    columns: dict[str, np.ndarray]

    def kinds(self, *kinds: str) -> list[str]:
        return [c for c in self.columns if c.partition(".")[0] in kinds]


def _read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    if not header or header[0] != "time_s":
        raise SchemaError(f"{path}: first column must be 'time_s', "
                          f"got {header[0] if header else 'nothing'!r}")
    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(row)} fields, "
                              f"header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise SchemaError(
                    f"{path}: column {header[j]!r}, row {i + 2}: "
                    f"not a number: {cell!r}"
                ) from None
    if len(rows) < 2:
        raise SchemaError(f"{path}: need at least two time samples")
    times = data[:, 0]
    if np.any(np.diff(times) < 0):
        raise SchemaError(f"{path}: column 'time_s' must be nondecreasing")
    return header, data


def read_trajectory(path) -> Trajectory:
    header, data = _read_table(path)
    columns = {}
    for j, name in enumerate(header[1:], start=1):
        kind, _, element = name.partition(".")
        if kind not in QUANTITY_KINDS or not element:
            raise SchemaError(f"{path}: column {name!r} is not a "
                              f"trajectory quantity (expected one of "
                              f"{', '.join(QUANTITY_KINDS)} + '.element')")
        columns[name] = data[:, j]
    if not columns:
        raise SchemaError(f"{path}: no quantity columns")
    return Trajectory(data[:, 0], columns)


def read_targets(path) -> Trajectory:
    header, data = _read_table(path)
    columns = {}
    for j, name in enumerate(header[1:], start=1):
        target, _, regulator = name.partition(".")
        if target not in TARGET_NAMES or not regulator:
            raise SchemaError(f"{path}: column {name!r} is not a target "
                              f"value (expected one of "
                              f"{', '.join(TARGET_NAMES)} + '.regulator')")
        columns[name] = data[:, j]
    if not columns:
        raise SchemaError(f"{path}: no target columns")
    return Trajectory(data[:, 0], columns)
