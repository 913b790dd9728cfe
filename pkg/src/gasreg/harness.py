"""Scenario ingestion, run orchestration, metrics and CSV artifacts.

Scenario files are JSON with pressures in bar, flows in kg/s and times in
hours; everything is converted to SI on parse.  The four run modes share
one artifact layout per output directory: trajectory.csv, targets.csv and
manifest.json always, plus mode-specific files (change list and LP export
for optimize, comparison series and error report for compare).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__, opt, sim
from .milp import build, export
from .milp.verify import verify_solution
from .network import (
    Arc,
    Network,
    NetworkError,
    Node,
    NodeKind,
    Profile,
    ProfileKind,
)
from .physics import GasConstants, GasFactorModel, PipeGeometry
from .regulator import (
    BandRegulatorError,
    RegulatorSpec,
    TargetValueSchedule,
    TargetValueSet,
    TargetValueType as TV,
    schedule_at,
)

log = logging.getLogger("gasreg")

BAR = build.BAR
HOUR = 3600.0

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_LIMIT = 4


class SolverLimitError(RuntimeError):
    """A node or time budget ran out before the solve finished."""


class ScenarioError(ValueError):
    """Schema or semantic error in a scenario file; names the field."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


# target-type <-> file key; q_min is accepted for validation but never
# scheduled (a finite minimal flow makes a band regulator, which is out
# of scope)
TARGET_KEYS = {
    "p_in_min_bar": TV.P_IN_MIN,
    "p_in_max_bar": TV.P_IN_MAX,
    "p_out_min_bar": TV.P_OUT_MIN,
    "p_out_max_bar": TV.P_OUT_MAX,
    "q_max_kg_s": TV.Q_MAX,
    "q_min_kg_s": TV.Q_MIN,
}
KEY_FOR_TARGET = {tv: key for key, tv in TARGET_KEYS.items()}
MANDATORY_TARGETS = (TV.P_IN_MIN, TV.P_IN_MAX, TV.P_OUT_MIN, TV.P_OUT_MAX,
                     TV.Q_MAX)


@dataclass
class NodeDef:
    id: str
    kind: str = "interior"
    height_m: float = 0.0
    flow: tuple[tuple[float, float], ...] | None = None  # (s, kg/s)
    pressure: tuple[tuple[float, float], ...] | None = None  # (s, Pa)


@dataclass
class PipeDef:
    id: str
    from_node: str
    to_node: str
    length_m: float
    diameter_m: float
    roughness_mm: float
    height_left_m: float = 0.0
    height_right_m: float = 0.0


@dataclass
class RegulatorDef:
    id: str
    from_node: str
    to_node: str
    targets_fixed: bool
    events: dict[TV, tuple[tuple[float, float], ...]]  # (s, SI value)


@dataclass
class Scenario:
    name: str
    horizon: float  # s
    gas: GasConstants
    z_model: str
    anchor_node: str
    anchor_pressure: float  # Pa
    nodes: list[NodeDef]
    pipes: list[PipeDef]
    regulators: list[RegulatorDef]

    @property
    def all_fixed(self) -> bool:
        return all(r.targets_fixed for r in self.regulators)

    def schedules(self) -> dict[str, TargetValueSchedule]:
        out = {}
        for reg in self.regulators:
            events = {tv: list(evs) for tv, evs in reg.events.items()
                      if tv is not TV.Q_MIN}
            out[reg.id] = TargetValueSchedule(events)
        return out

    def initial_targets(self) -> dict[str, TargetValueSet]:
        scheds = self.schedules()
        return {rid: schedule_at(s, s.start_time)
                for rid, s in scheds.items()}


def _get(obj, key, field_path, typ=None, required=True, default=None):
    if key not in obj:
        if required:
            raise ScenarioError(f"{field_path}.{key}", "missing field")
        return default
    value = obj[key]
    if typ is not None and not isinstance(value, typ):
        raise ScenarioError(
            f"{field_path}.{key}", f"expected {typ}, got {type(value).__name__}"
        )
    return value


def _points(raw, field_path, value_scale=1.0, time_scale=HOUR):
    if not isinstance(raw, list) or not raw:
        raise ScenarioError(field_path, "expected a non-empty list of "
                                        "[time_h, value] pairs")
    pts = []
    for i, pair in enumerate(raw):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(v, (int, float)) for v in pair)):
            raise ScenarioError(f"{field_path}[{i}]",
                                "expected a [time_h, value] pair")
        pts.append((float(pair[0]) * time_scale, float(pair[1]) * value_scale))
    times = [t for t, _ in pts]
    if any(a >= b for a, b in zip(times, times[1:])):
        raise ScenarioError(field_path, "times must be strictly increasing")
    return tuple(pts)


def parse_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ScenarioError(str(path), "scenario file not found")
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}", f"invalid JSON: {exc.msg}")
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict) -> Scenario:
    name = _get(raw, "name", "scenario", str)
    horizon = float(_get(raw, "horizon_hours", "scenario", (int, float))) * HOUR
    if horizon <= 0.0:
        raise ScenarioError("scenario.horizon_hours", "horizon must be > 0")

    gas_raw = _get(raw, "gas", "scenario", dict)
    gas = GasConstants(
        specific_gas_constant=float(_get(gas_raw, "specific_gas_constant",
                                         "gas", (int, float))),
        temperature=float(_get(gas_raw, "temperature_k", "gas", (int, float))),
        gravity=float(gas_raw.get("gravity", 9.81)),
    )
    z_model = _get(gas_raw, "z_model", "gas", str)
    if z_model not in ("linear_aga", "quadratic_papay"):
        raise ScenarioError("gas.z_model", f"unknown model {z_model!r}")

    init_raw = _get(raw, "initial_state", "scenario", dict)
    anchor_node = _get(init_raw, "anchor_node", "initial_state", str)
    anchor_pressure = float(_get(init_raw, "pressure_bar", "initial_state",
                                 (int, float))) * BAR

    nodes = []
    seen = set()
    for i, nd in enumerate(_get(raw, "nodes", "scenario", list)):
        fp = f"nodes[{i}]"
        nid = _get(nd, "id", fp, str)
        if nid in seen:
            raise ScenarioError(fp, f"duplicate node id {nid!r}")
        seen.add(nid)
        kind = nd.get("kind", "interior")
        if kind not in ("interior", "entry", "exit"):
            raise ScenarioError(f"{fp}.kind", f"unknown kind {kind!r}")
        flow = nd.get("flow_kg_s")
        pressure = nd.get("pressure_bar")
        if kind == "interior" and (flow is not None or pressure is not None):
            raise ScenarioError(fp, "interior nodes take no boundary profiles")
        nodes.append(NodeDef(
            id=nid, kind=kind, height_m=float(nd.get("height_m", 0.0)),
            flow=None if flow is None else _points(flow, f"{fp}.flow_kg_s"),
            pressure=None if pressure is None else _points(
                pressure, f"{fp}.pressure_bar", value_scale=BAR),
        ))
    if anchor_node not in seen:
        raise ScenarioError("initial_state.anchor_node",
                            f"unknown node {anchor_node!r}")

    pipes = []
    arc_ids = set()
    for i, pd in enumerate(_get(raw, "pipes", "scenario", list)):
        fp = f"pipes[{i}]"
        pid = _get(pd, "id", fp, str)
        if pid in arc_ids:
            raise ScenarioError(fp, f"duplicate arc id {pid!r}")
        arc_ids.add(pid)
        for end in ("from", "to"):
            if _get(pd, end, fp, str) not in seen:
                raise ScenarioError(f"{fp}.{end}",
                                    f"unknown node {pd[end]!r}")
        pipes.append(PipeDef(
            id=pid, from_node=pd["from"], to_node=pd["to"],
            length_m=float(_get(pd, "length_m", fp, (int, float))),
            diameter_m=float(_get(pd, "diameter_m", fp, (int, float))),
            roughness_mm=float(_get(pd, "roughness_mm", fp, (int, float))),
            height_left_m=float(pd.get("height_left_m", 0.0)),
            height_right_m=float(pd.get("height_right_m", 0.0)),
        ))

    regulators = []
    for i, rd in enumerate(_get(raw, "regulators", "scenario", list)):
        fp = f"regulators[{i}]"
        rid = _get(rd, "id", fp, str)
        if rid in arc_ids:
            raise ScenarioError(fp, f"duplicate arc id {rid!r}")
        arc_ids.add(rid)
        for end in ("from", "to"):
            if _get(rd, end, fp, str) not in seen:
                raise ScenarioError(f"{fp}.{end}", f"unknown node {rd[end]!r}")
        fixed = bool(_get(rd, "targets_fixed", fp, bool))
        targets_raw = _get(rd, "targets", fp, dict)
        events: dict[TV, tuple] = {}
        for key, pts in targets_raw.items():
            if key not in TARGET_KEYS:
                raise ScenarioError(
                    f"{fp}.targets.{key}",
                    f"unknown target type (expected one of "
                    f"{sorted(TARGET_KEYS)})",
                )
            tv = TARGET_KEYS[key]
            scale = 1.0 if tv in (TV.Q_MAX, TV.Q_MIN) else BAR
            events[tv] = _points(pts, f"{fp}.targets.{key}",
                                 value_scale=scale)
        for tv in MANDATORY_TARGETS:
            if tv not in events or events[tv][0][0] != 0.0:
                raise ScenarioError(
                    f"{fp}.targets.{KEY_FOR_TARGET[tv]}",
                    "mandatory target must carry an event at t = 0",
                )
        # a finite minimal flow below the maximal one specifies a band
        # regulator, which is excluded from the model class
        for t, q_min in events.get(TV.Q_MIN, ()):
            q_max = [v for tq, v in events[TV.Q_MAX] if tq <= t][-1]
            if math.isfinite(q_min) and q_min < q_max:
                raise ScenarioError(
                    f"{fp}.targets.q_min_kg_s",
                    f"q_min = {q_min} below q_max = {q_max} at t = {t} s "
                    "specifies a band regulator, which is not supported",
                )
        regulators.append(RegulatorDef(rid, rd["from"], rd["to"], fixed,
                                       events))
    if not regulators and not pipes:
        raise ScenarioError("scenario", "network has no arcs")

    sc = Scenario(name, horizon, gas, z_model, anchor_node, anchor_pressure,
                  nodes, pipes, regulators)
    try:
        sc.schedules()
    except (ValueError, BandRegulatorError) as exc:
        raise ScenarioError("regulators", str(exc))
    return sc


def serialize_scenario(sc: Scenario) -> dict:
    """Canonical plain-dict form: parse(serialize(x)) == x."""

    def hours(points, scale=1.0):
        return [[t / HOUR, v / scale] for t, v in points]

    out = {
        "name": sc.name,
        "horizon_hours": sc.horizon / HOUR,
        "gas": {
            "specific_gas_constant": sc.gas.specific_gas_constant,
            "temperature_k": sc.gas.temperature,
            "gravity": sc.gas.gravity,
            "z_model": sc.z_model,
        },
        "initial_state": {
            "anchor_node": sc.anchor_node,
            "pressure_bar": sc.anchor_pressure / BAR,
        },
        "nodes": [],
        "pipes": [],
        "regulators": [],
    }
    for nd in sc.nodes:
        entry = {"id": nd.id, "kind": nd.kind, "height_m": nd.height_m}
        if nd.flow is not None:
            entry["flow_kg_s"] = hours(nd.flow)
        if nd.pressure is not None:
            entry["pressure_bar"] = hours(nd.pressure, BAR)
        out["nodes"].append(entry)
    for pd in sc.pipes:
        out["pipes"].append({
            "id": pd.id, "from": pd.from_node, "to": pd.to_node,
            "length_m": pd.length_m, "diameter_m": pd.diameter_m,
            "roughness_mm": pd.roughness_mm,
            "height_left_m": pd.height_left_m,
            "height_right_m": pd.height_right_m,
        })
    for rd in sc.regulators:
        targets = {}
        for tv in TV:
            if tv not in rd.events:
                continue
            scale = 1.0 if tv in (TV.Q_MAX, TV.Q_MIN) else BAR
            targets[KEY_FOR_TARGET[tv]] = hours(rd.events[tv], scale)
        out["regulators"].append({
            "id": rd.id, "from": rd.from_node, "to": rd.to_node,
            "targets_fixed": rd.targets_fixed, "targets": targets,
        })
    return out


def write_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(serialize_scenario(sc), fh, indent=2)
        fh.write("\n")


def scenario_network(sc: Scenario) -> Network:
    factory = {
        "linear_aga": GasFactorModel.linear_aga,
        "quadratic_papay": GasFactorModel.quadratic_papay,
    }[sc.z_model]
    schedules = sc.schedules()
    nodes = [
        Node(
            nd.id, NodeKind(nd.kind),
            flow_profile=(None if nd.flow is None
                          else Profile(ProfileKind.PIECEWISE_CONSTANT,
                                       nd.flow)),
            pressure_profile=(None if nd.pressure is None
                              else Profile(ProfileKind.PIECEWISE_LINEAR,
                                           nd.pressure)),
            height=nd.height_m,
        )
        for nd in sc.nodes
    ]
    arcs = [
        Arc(pd.id, pd.from_node, pd.to_node,
            PipeGeometry(pd.length_m, pd.diameter_m, pd.roughness_mm * 1e-3,
                         pd.height_left_m, pd.height_right_m))
        for pd in sc.pipes
    ]
    arcs += [
        Arc(rd.id, rd.from_node, rd.to_node,
            RegulatorSpec(rd.id, schedules[rd.id]))
        for rd in sc.regulators
    ]
    return Network(nodes, arcs, sc.gas, factory(sc.gas.temperature))


# -- configuration ---------------------------------------------------------

_DISCRETIZATIONS = {
    "leftright": sim.Discretization.LEFT_RIGHT,
    "trapezoidal": sim.Discretization.TRAPEZOIDAL,
}


@dataclass
class RunConfig:
    simulation: sim.SimulationConfig
    optimization: build.TvOptConfig
    export_lp: bool = False
    ref_csv: str | None = None


def load_run_config(sc: Scenario, config_path=None, *, discretization=None,
                    alpha=None, dt_sim=None, dt_opt=None, epsilon=None,
                    export_lp=False, ref_csv=None) -> RunConfig:
    raw = {}
    if config_path is not None:
        try:
            with open(config_path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ScenarioError(str(config_path), "config file not found")
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{config_path}:{exc.lineno}",
                                f"invalid JSON: {exc.msg}")

    sim_raw = dict(raw.get("simulation", {}))
    opt_raw = dict(raw.get("optimization", {}))
    gas_raw = raw.get("gas")
    if gas_raw:
        sc.gas = replace(sc.gas, **{
            {"specific_gas_constant": "specific_gas_constant",
             "temperature_k": "temperature",
             "gravity": "gravity"}[key]: float(value)
            for key, value in gas_raw.items()
        })

    if discretization is not None:
        sim_raw["discretization"] = discretization
    if alpha is not None:
        sim_raw["alpha"] = alpha
    if dt_sim is not None:
        sim_raw["dt"] = dt_sim
    if dt_opt is not None:
        opt_raw["dt_opt"] = dt_opt
    if epsilon is not None:
        opt_raw["epsilon"] = epsilon

    disc = sim_raw.pop("discretization", "leftright")
    if disc not in _DISCRETIZATIONS:
        raise ScenarioError("simulation.discretization",
                            f"unknown discretization {disc!r}")
    try:
        sim_cfg = sim.SimulationConfig(
            dt=float(sim_raw.get("dt", 180.0)),
            horizon=sc.horizon,
            discretization=_DISCRETIZATIONS[disc],
            newton_tol=float(sim_raw.get("newton_tol", 1e-8)),
            newton_max_iter=int(sim_raw.get("newton_max_iter", 50)),
            alpha=float(sim_raw.get("alpha", 1.0e3)),
            max_halvings=int(sim_raw.get("max_halvings", 4)),
        )
        opt_cfg = build.TvOptConfig(
            dt_opt=float(opt_raw.get("dt_opt", 900.0)),
            epsilon=float(opt_raw.get("epsilon", 0.0)),
            pressure_bounds=tuple(opt_raw.get("pressure_bounds",
                                              (1.0, 100.0))),
            flow_bounds=tuple(opt_raw.get("flow_bounds", (-50.0, 50.0))),
        )
    except ValueError as exc:
        raise ScenarioError("config", str(exc))
    return RunConfig(sim_cfg, opt_cfg, export_lp=export_lp, ref_csv=ref_csv)


# -- CSV artifacts ---------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.10g}"


def trajectory_columns(network: Network) -> list[str]:
    cols = [f"p.{nid}" for nid in network.node_order]
    for aid in network.pipe_order:
        cols += [f"ql.{aid}", f"qr.{aid}"]
    cols += [f"q.{aid}" for aid in network.regulator_order]
    return cols


def write_trajectory_csv(path, network: Network, times, states) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + trajectory_columns(network))
        for t, state in zip(times, states):
            row = [_fmt(t)]
            row += [_fmt(state.node_pressures[nid] / BAR)
                    for nid in network.node_order]
            for aid in network.pipe_order:
                ql, qr = state.arc_flows[aid]
                row += [_fmt(ql), _fmt(qr)]
            row += [_fmt(state.arc_flows[aid][0])
                    for aid in network.regulator_order]
            writer.writerow(row)


def read_trajectory_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not rows or header[0] != "time_s":
        raise ScenarioError(str(path), "not a trajectory CSV")
    data = np.array(rows)
    times = data[:, 0]
    return times, {name: data[:, i + 1] for i, name in enumerate(header[1:])}


_TV_CSV = {TV.P_IN_MIN: "p_in_min", TV.P_IN_MAX: "p_in_max",
           TV.P_OUT_MIN: "p_out_min", TV.P_OUT_MAX: "p_out_max",
           TV.Q_MAX: "q_max"}


def write_targets_csv(path, regulator_ids, times,
                      schedules: dict[str, TargetValueSchedule]) -> None:
    """Target values sampled on the grid, pressures in bar."""
    cols = [f"{name}.{rid}" for rid in regulator_ids
            for name in _TV_CSV.values()]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + cols)
        for t in times:
            row = [_fmt(t)]
            for rid in regulator_ids:
                tvs = schedule_at(schedules[rid], t)
                for tv in _TV_CSV:
                    value = tvs.value(tv)
                    if tv not in (TV.Q_MAX, TV.Q_MIN):
                        value /= BAR
                    row.append(_fmt(value))
            writer.writerow(row)


def read_targets_csv(path) -> dict[str, TargetValueSchedule]:
    """Rebuild right-continuous schedules from a sampled target CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not rows or header[0] != "time_s":
        raise ScenarioError(str(path), "not a target-value CSV")
    by_name = {tv_name: tv for tv, tv_name in _TV_CSV.items()}
    events: dict[str, dict[TV, list]] = {}
    for i, col in enumerate(header[1:], start=1):
        tv_name, _, rid = col.partition(".")
        if tv_name not in by_name or not rid:
            raise ScenarioError(str(path), f"unknown target column {col!r}")
        tv = by_name[tv_name]
        scale = 1.0 if tv in (TV.Q_MAX, TV.Q_MIN) else BAR
        evs = events.setdefault(rid, {}).setdefault(tv, [])
        for row in rows:
            value = row[i] * scale
            if not evs or value != evs[-1][1]:
                evs.append((row[0], value))
    return {rid: TargetValueSchedule(dict(per_tv))
            for rid, per_tv in events.items()}


def write_changes_csv(path, changes, dt_opt: float) -> None:
    """Change list with both optimization times and half-step-shifted ones."""
    shift = math.floor(dt_opt / 120.0 + 0.5) * 60.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["regulator", "target", "time_s", "time_shifted_s",
                         "value"])
        for c in changes:
            value = c.value
            if c.tv_type not in (TV.Q_MAX, TV.Q_MIN):
                value /= BAR
            writer.writerow([c.regulator, _TV_CSV[c.tv_type], _fmt(c.time),
                             _fmt(c.time - shift), _fmt(value)])


# -- comparison metric -----------------------------------------------------

def relative_error_series(sol: np.ndarray, ref: np.ndarray,
                          grid: np.ndarray) -> np.ndarray:
    """e(t) = integral of (sol - ref) over integral of ref, trapezoidal."""
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
    out = np.zeros_like(grid)
    out[1:] = num[1:] / den[1:]
    return out


@dataclass
class ComparisonReport:
    grid: np.ndarray
    series: dict[tuple[str, str], np.ndarray]  # (regulator, quantity)
    max_error: dict[tuple[str, str], float] = field(default_factory=dict)
    end_error: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        for key, series in self.series.items():
            if len(series) != len(self.grid):
                raise ValueError(f"series {key} does not match the grid")
            if not np.all(np.isfinite(series)):
                raise ValueError(f"series {key} contains non-finite errors")
            if key not in self.max_error:
                self.max_error[key] = float(np.max(np.abs(series)))
            if key not in self.end_error:
                self.end_error[key] = float(abs(series[-1]))

    def as_dict(self) -> dict:
        out = {}
        for rid, qty in self.series:
            out.setdefault(rid, {})[qty] = {
                "max_rel_error": self.max_error[(rid, qty)],
                "end_rel_error": self.end_error[(rid, qty)],
            }
        return out


def compare_series(network: Network, sol: tuple, ref: tuple) -> ComparisonReport:
    """Relative errors of the regulator quantities p_l, p_r, q.

    ``sol`` and ``ref`` are (times, columns) pairs; the finer grid is the
    common one and the coarser series is linearly interpolated onto it.
    """
    (t_sol, cols_sol), (t_ref, cols_ref) = sol, ref
    grid = t_sol if len(t_sol) >= len(t_ref) else t_ref
    series = {}
    for aid in network.regulator_order:
        arc = network.arcs[aid]
        for qty, col in (("pl", f"p.{arc.from_node}"),
                         ("pr", f"p.{arc.to_node}"),
                         ("q", f"q.{aid}")):
            for cols, label in ((cols_sol, "solution"), (cols_ref, "reference")):
                if col not in cols:
                    raise ScenarioError(label, f"missing column {col!r}")
            s = np.interp(grid, t_sol, cols_sol[col])
            r = np.interp(grid, t_ref, cols_ref[col])
            series[(aid, qty)] = relative_error_series(s, r, grid)
    return ComparisonReport(grid, series)


def write_comparison_csv(path, report: ComparisonReport) -> None:
    keys = sorted(report.series)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + [f"e_{qty}.{rid}" for rid, qty in keys])
        for i, t in enumerate(report.grid):
            writer.writerow([_fmt(t)]
                            + [_fmt(report.series[k][i]) for k in keys])


# -- run orchestration -----------------------------------------------------

def _manifest(mode: str, sc: Scenario, cfg: RunConfig, extra: dict) -> dict:
    sim_cfg, opt_cfg = cfg.simulation, cfg.optimization
    data = {
        "mode": mode,
        "scenario": serialize_scenario(sc),
        "simulation": {
            "dt_s": sim_cfg.dt,
            "horizon_s": sim_cfg.horizon,
            "discretization": sim_cfg.discretization.name.lower(),
            "newton_tol": sim_cfg.newton_tol,
            "newton_max_iter": sim_cfg.newton_max_iter,
            "alpha": sim_cfg.alpha,
            "regulator_variant": sim_cfg.regulator_variant.name.lower(),
            "max_halvings": sim_cfg.max_halvings,
        },
        "optimization": {
            "dt_opt_s": opt_cfg.dt_opt,
            "epsilon": opt_cfg.epsilon,
            "pressure_bounds_bar": list(opt_cfg.pressure_bounds),
            "flow_bounds_kg_s": list(opt_cfg.flow_bounds),
        },
        "gas": {
            "specific_gas_constant": sc.gas.specific_gas_constant,
            "temperature_k": sc.gas.temperature,
            "gravity": sc.gas.gravity,
            "z_model": sc.z_model,
        },
        "scaling": {"pressure_unit_pa": 1.0e5, "flow_unit_kg_s": 1.0},
        "decisions": {
            "time_integrator": "implicit Euler",
            "optimization_model": ("linearized box scheme with per-node "
                                   "compressibility frozen at the initial "
                                   "state"),
            "target_sampling": ("simulation holds the set points of each "
                                "step's start; the coarse model applies "
                                "those of the step's end"),
            "comparison_resampling": ("linear interpolation of the coarser "
                                      "series onto the finer grid"),
            "change_time_shift": ("reported change times are shifted "
                                  "earlier by half a coarse step, rounded "
                                  "to whole minutes"),
        },
        "versions": {
            "gasreg": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    data.update(extra)
    return data


def _write_manifest(out_dir, data) -> None:
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _steady_initial(network: Network, sc: Scenario,
                    cfg: sim.SimulationConfig):
    return sim.solve_steady_state(
        network, t=0.0, config=cfg,
        anchor=(sc.anchor_node, sc.anchor_pressure),
    )


def run_simulate(sc: Scenario, cfg: RunConfig, out_dir) -> dict:
    network = scenario_network(sc)
    schedules = sc.schedules()
    initial = _steady_initial(network, sc, cfg.simulation)
    log.info("simulate %s: %d steps of %.0f s", sc.name,
             round(sc.horizon / cfg.simulation.dt), cfg.simulation.dt)
    traj = sim.simulate(network, schedules, cfg.simulation, initial)
    write_trajectory_csv(out_dir / "trajectory.csv", network, traj.times,
                         traj.states)
    write_targets_csv(out_dir / "targets.csv",
                      network.regulator_order, traj.times, schedules)
    _write_manifest(out_dir, _manifest("simulate", sc, cfg, {
        "steps": len(traj.times) - 1,
        "newton_iterations_total": sum(d.newton_iterations
                                       for d in traj.diagnostics),
    }))
    return {"trajectory": out_dir / "trajectory.csv", "traj": traj,
            "network": network}


def _opt_march(sc: Scenario, cfg: RunConfig):
    """Coarse-model trajectory plus, for free targets, the change search."""
    network = scenario_network(sc)
    sim_net = scenario_network(sc)
    initial = _steady_initial(sim_net, sc, cfg.simulation)
    opt_cfg = cfg.optimization
    if sc.all_fixed:
        schedules = sc.schedules()
        times, states = opt.march_linearized(network, schedules, sc.horizon,
                                             opt_cfg, initial)
        return network, initial, times, states, schedules, None
    times, states = opt.march_prescribed(network, sc.horizon, opt_cfg,
                                         initial)
    result = opt.minimize_changes(network, times, states,
                                  sc.initial_targets(), opt_cfg)
    return network, initial, times, states, result.schedules, result


def run_optimize(sc: Scenario, cfg: RunConfig, out_dir) -> dict:
    opt_cfg = cfg.optimization
    network, initial, times, states, schedules, result = _opt_march(sc, cfg)
    if result is None:
        model = build.build_network_milp(network, sc.horizon, opt_cfg,
                                         initial, schedules=schedules)
        asg = opt.opt_assignment(model, network, times, states, schedules,
                                 opt_cfg)
        objective = 0
        changes = [
            opt.TvChange(rid, tv, round(t / opt_cfg.dt_opt), t, value)
            for rid, sched in schedules.items()
            for tv, evs in sched.events.items()
            for t, value in evs if t > times[0]
        ]
        changes.sort(key=lambda c: (c.step, c.tv_type.value))
    else:
        model = build.build_network_milp(network, sc.horizon, opt_cfg,
                                         initial,
                                         initial_targets=sc.initial_targets())
        asg = opt.change_assignment(model, network, times, states, result,
                                    opt_cfg)
        objective = result.objective
        changes = result.changes
    report = verify_solution(model, asg)
    if not report.feasible:
        worst = report.worst()
        raise sim.NewtonError(
            f"optimization certificate infeasible: {worst.name} violated "
            f"by {worst.amount:.3g}"
        )
    log.info("optimize %s: objective %s, certificate feasible", sc.name,
             objective)

    write_trajectory_csv(out_dir / "trajectory.csv", network, times, states)
    write_targets_csv(out_dir / "targets.csv", network.regulator_order,
                      times, schedules)
    write_changes_csv(out_dir / "changes.csv", changes, opt_cfg.dt_opt)
    extra = {
        "objective": objective,
        "certificate_feasible": True,
        "target_changes": len(changes),
    }
    if result is not None:
        extra["optimality_proof"] = (
            "exhaustive interval search with iteratively deepened change "
            "budget; every smaller budget proven infeasible"
        )
    if cfg.export_lp:
        (out_dir / "model.lp").write_text(export.export_lp(model))
        (out_dir / "model.mps").write_text(export.export_mps(model))
        extra["lp_export"] = "model.lp"
    _write_manifest(out_dir, _manifest("optimize", sc, cfg, extra))
    return {"objective": objective, "changes": changes, "model": model,
            "network": network, "times": times, "states": states,
            "schedules": schedules}


def run_verify(sc: Scenario, cfg: RunConfig, out_dir) -> dict:
    """Check a previously written optimize solution against the model."""
    traj_path = out_dir / "trajectory.csv"
    targets_path = out_dir / "targets.csv"
    for path in (traj_path, targets_path):
        if not path.exists():
            raise ScenarioError(
                str(path), "verify needs the artifacts of a prior optimize "
                           "run in the output directory"
            )
    times, cols = read_trajectory_csv(traj_path)
    schedules = read_targets_csv(targets_path)
    network = scenario_network(sc)
    opt_cfg = cfg.optimization
    dt = times[1] - times[0]
    opt_cfg = replace(opt_cfg, dt_opt=float(dt))

    from .network import SystemState
    states = []
    for i, t in enumerate(times):
        pressures = {nid: cols[f"p.{nid}"][i] * BAR
                     for nid in network.node_order}
        flows = {}
        for aid in network.pipe_order:
            flows[aid] = (cols[f"ql.{aid}"][i], cols[f"qr.{aid}"][i])
        for aid in network.regulator_order:
            q = cols[f"q.{aid}"][i]
            flows[aid] = (q, q)
        states.append(SystemState(pressures, flows, {}, float(t)))

    initial = states[0]
    model = build.build_network_milp(network, float(times[-1] - times[0]),
                                     opt_cfg, initial, schedules=schedules)
    asg = opt.feasibility_assignment(model, network, list(times), states,
                                     schedules, opt_cfg)
    report = verify_solution(model, asg)
    payload = {
        "feasible": report.feasible,
        "objective": report.objective,
        "violations": [
            {"name": v.name, "kind": v.kind, "amount": v.amount}
            for v in report.violations[:50]
        ],
    }
    with open(out_dir / "verify_report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, _manifest("verify", sc, cfg, {
        "verified_feasible": report.feasible,
    }))
    if not report.feasible:
        worst = report.worst()
        raise sim.NewtonError(
            f"solution fails verification: {worst.name} violated by "
            f"{worst.amount:.3g}"
        )
    return {"report": report}


def run_compare(sc: Scenario, cfg: RunConfig, out_dir) -> dict:
    network = scenario_network(sc)
    schedules = sc.schedules()
    initial = _steady_initial(network, sc, cfg.simulation)
    traj = sim.simulate(network, schedules, cfg.simulation, initial)
    write_trajectory_csv(out_dir / "solution.csv", network, traj.times,
                         traj.states)
    sol_times = np.array(traj.times)
    sol_cols = dict(zip(
        trajectory_columns(network),
        np.array([[_state_value(network, s, col)
                   for col in trajectory_columns(network)]
                  for s in traj.states]).T,
    ))

    if cfg.ref_csv is not None:
        ref_times, ref_cols = read_trajectory_csv(cfg.ref_csv)
    else:
        ref_net, _, times, states, _, _ = _opt_march(sc, cfg)
        write_trajectory_csv(out_dir / "reference.csv", ref_net, times,
                             states)
        ref_times, ref_cols = read_trajectory_csv(out_dir / "reference.csv")

    report = compare_series(network, (sol_times, sol_cols),
                            (ref_times, ref_cols))
    write_comparison_csv(out_dir / "comparison.csv", report)
    write_targets_csv(out_dir / "targets.csv", network.regulator_order,
                      list(sol_times), schedules)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, _manifest("compare", sc, cfg, {
        "errors": report.as_dict(),
        "reference": cfg.ref_csv or "coarse model",
    }))
    return {"report": report}


def _state_value(network: Network, state, col: str) -> float:
    qty, _, element = col.partition(".")
    if qty == "p":
        return state.node_pressures[element] / BAR
    if qty == "ql":
        return state.arc_flows[element][0]
    if qty == "qr":
        return state.arc_flows[element][1]
    return state.arc_flows[element][0]


RUN_MODES = {
    "simulate": run_simulate,
    "optimize": run_optimize,
    "verify": run_verify,
    "compare": run_compare,
}
