"""Model writers in LP and fixed-field MPS format.

Both writers are deterministic: identical models serialize byte for byte.
Indicator constraints are replaced by their big-M rows before writing, so
the files are consumable by any plain MILP reader.
"""

from __future__ import annotations

import math

from .model import MilpModel, Sense
from .reformulate import reformulate_big_m


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.12g}"


def _plain(model: MilpModel) -> MilpModel:
    return reformulate_big_m(model) if model.indicators else model


def _lp_terms(coeffs) -> str:
    parts = []
    for var, coef in coeffs:
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {_num(abs(coef))} {var}")
    if not parts:
        return "0"
    out = " ".join(parts)
    return out[2:] if out.startswith("+ ") else out


def export_lp(model: MilpModel) -> str:
    """CPLEX-style LP text."""
    m = _plain(model)
    lines = [f"\\ {m.name}"]
    lines.append("Minimize" if m.objective_sense == "min" else "Maximize")
    lines.append(f" obj: {_lp_terms(m.objective)}")
    lines.append("Subject To")
    for con in m.constraints:
        lines.append(f" {con.name}: {_lp_terms(con.coeffs)} {con.sense.value} {_num(con.rhs)}")
    lines.append("Bounds")
    for var in m.variables.values():
        if var.is_binary and var.lb == 0.0 and var.ub == 1.0:
            continue
        lb = "-inf" if math.isinf(var.lb) else _num(var.lb)
        ub = "+inf" if math.isinf(var.ub) else _num(var.ub)
        if var.lb == var.ub:
            lines.append(f" {var.name} = {lb}")
        else:
            lines.append(f" {lb} <= {var.name} <= {ub}")
    binaries = [v.name for v in m.variables.values() if v.is_binary]
    if binaries:
        lines.append("Binaries")
        for name in binaries:
            lines.append(f" {name}")
    lines.append("End")
    return "\n".join(lines) + "\n"


_NAME_W = 28
_SENSE_ROW = {Sense.LE: "L", Sense.GE: "G", Sense.EQ: "E"}


def _mps_fields(*fields: str) -> str:
    out = ""
    starts = (1, 4, 4 + _NAME_W + 2, 4 + 2 * (_NAME_W + 2), 4 + 2 * (_NAME_W + 2) + 14 + 2)
    for pos, text in zip(starts, fields):
        out = out.ljust(pos) + text
    return out.rstrip()


def export_mps(model: MilpModel) -> str:
    """Fixed-field MPS text with 28 character name fields."""
    m = _plain(model)
    lines = [f"NAME{'':10}{m.name.upper()}"]
    lines.append("ROWS")
    lines.append(_mps_fields("N", "OBJ"))
    for con in m.constraints:
        lines.append(_mps_fields(_SENSE_ROW[con.sense], con.name))

    by_col: dict[str, list[tuple[str, float]]] = {v: [] for v in m.variables}
    for var, coef in m.objective:
        by_col[var].append(("OBJ", coef))
    for con in m.constraints:
        for var, coef in con.coeffs:
            by_col[var].append((con.name, coef))

    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for var in m.variables.values():
        if var.is_binary != in_int:
            kind = "'INTORG'" if var.is_binary else "'INTEND'"
            lines.append(_mps_fields("", f"M{marker:04d}", "'MARKER'", "", kind))
            in_int = var.is_binary
            marker += 1
        entries = by_col[var.name] or [("OBJ", 0.0)]
        for row, coef in entries:
            lines.append(_mps_fields("", var.name, row, _num(coef)))
    if in_int:
        lines.append(_mps_fields("", f"M{marker:04d}", "'MARKER'", "", "'INTEND'"))

    lines.append("RHS")
    for con in m.constraints:
        if con.rhs != 0.0:
            lines.append(_mps_fields("", "RHS", con.name, _num(con.rhs)))

    lines.append("BOUNDS")
    for var in m.variables.values():
        if var.lb == var.ub:
            lines.append(_mps_fields("FX", "BND", var.name, _num(var.lb)))
            continue
        if var.is_binary and var.lb == 0.0 and var.ub == 1.0:
            lines.append(_mps_fields("BV", "BND", var.name))
            continue
        if math.isinf(var.lb):
            lines.append(_mps_fields("MI", "BND", var.name))
        elif var.lb != 0.0:
            lines.append(_mps_fields("LO", "BND", var.name, _num(var.lb)))
        if not math.isinf(var.ub):
            lines.append(_mps_fields("UP", "BND", var.name, _num(var.ub)))
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"
