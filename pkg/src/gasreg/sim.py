"""Steady-state solves and implicit time stepping of the network DAE.

The time derivative is replaced by a backward difference, so each step is
one nonlinear system solved by a semismooth Newton iteration; the max/min
switching of the regulators enters through branch-selected one-sided
Jacobians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import regulator as reg
from .network import (
    Assembler,
    Discretization,
    Network,
    NetworkError,
    SystemState,
    profile_eval,
)
from .regulator import (
    PushingResult,
    RegulatorModelVariant,
    TargetValueSchedule,
    TargetValueSet,
    pushing_target_value,
    schedule_at,
)


class NewtonError(RuntimeError):
    """Non-convergence of the semismooth Newton iteration."""

    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(message)
        self.residual_history = residual_history


class SingularJacobianError(RuntimeError):
    def __init__(self, equation_index: int, equation_name: str = ""):
        name = f" ({equation_name})" if equation_name else ""
        super().__init__(f"singular Jacobian, worst equation {equation_index}{name}")
        self.equation_index = equation_index


class StepError(RuntimeError):
    """Step rejected after exhausting the halving budget."""

    def __init__(self, t: float, cause: Exception):
        super().__init__(f"time step towards t = {t} s rejected: {cause}")
        self.t = t
        self.cause = cause


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 180.0
    horizon: float = 12 * 3600.0
    discretization: Discretization = Discretization.LEFT_RIGHT
    newton_tol: float = 1e-8
    newton_max_iter: int = 50
    alpha: float = 1.0e3
    regulator_variant: RegulatorModelVariant = RegulatorModelVariant.ODE
    max_halvings: int = 4

    def __post_init__(self):
        if self.dt <= 0.0 or self.horizon <= 0.0:
            raise ValueError("dt and horizon must be positive")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("dt must divide the horizon")
        if self.newton_tol <= 0.0 or self.newton_max_iter <= 0:
            raise ValueError("Newton tolerances must be positive")


@dataclass
class StepDiagnostics:
    newton_iterations: int
    halvings: int
    tie_events: int
    pushing: dict[str, PushingResult]
    nesting_value: dict[str, float]


@dataclass
class Trajectory:
    times: list[float]
    states: list[SystemState]
    diagnostics: list[StepDiagnostics]

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trajectory times must be strictly increasing")


def semismooth_newton(residual_fn, x0: np.ndarray, tol: float, max_iter: int,
                      equation_names: list[str] | None = None):
    """Solve residual_fn(x) = 0; residual_fn returns (residual, jacobian).

    Branch selection happens inside residual_fn via one-sided derivatives.
    A simple backtracking damping keeps the iteration from overshooting far
    from the solution; near it the full step gives the usual fast local
    convergence.
    """
    x = np.array(x0, dtype=float)
    res, jac = residual_fn(x)
    norm = float(np.max(np.abs(res)))
    history = [norm]
    for iteration in range(1, max_iter + 1):
        if norm <= tol:
            return x, iteration - 1, history
        try:
            dx = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            # Degenerate max/min ties can drop Jacobian rank while the
            # system stays consistent (e.g. a closed regulator at balanced
            # pressures); the min-norm step still converges there.
            dx, *_ = np.linalg.lstsq(jac, -res, rcond=None)
            predicted = float(np.max(np.abs(jac @ dx + res)))
            if predicted >= norm * (1.0 - 1e-9):
                worst = int(np.argmax(np.abs(res)))
                name = equation_names[worst] if equation_names else ""
                raise SingularJacobianError(worst, name)
        if not np.all(np.isfinite(dx)):
            worst = int(np.argmax(~np.isfinite(dx)))
            name = equation_names[worst] if equation_names else ""
            raise SingularJacobianError(worst, name)

        damping = 1.0
        for _ in range(12):
            try:
                new_res, new_jac = residual_fn(x + damping * dx)
            except (ZeroDivisionError, ValueError):
                damping *= 0.5
                continue
            new_norm = float(np.max(np.abs(new_res)))
            if new_norm < norm or new_norm <= tol:
                break
            damping *= 0.5
        else:
            raise NewtonError(
                f"line search stalled at residual {norm:.3e}", history
            )
        x = x + damping * dx
        res, jac, norm = new_res, new_jac, new_norm
        history.append(norm)
    if norm <= tol:
        return x, max_iter, history
    raise NewtonError(
        f"no convergence in {max_iter} iterations, last residual {norm:.3e}",
        history,
    )


def _tvs_map_at(network: Network, schedules: dict[str, TargetValueSchedule], t: float):
    out = {}
    for aid in network.regulator_order:
        spec_sched = schedules.get(aid)
        if spec_sched is None:
            out[aid] = TargetValueSet()
        else:
            out[aid] = schedule_at(spec_sched, t)
    return out


def neutral_targets(network: Network) -> dict[str, TargetValueSet]:
    """Fully open set-points: no target ever binds except non-compression."""
    return {aid: TargetValueSet() for aid in network.regulator_order}


def solve_steady_state(
    network: Network,
    tvs_map: dict[str, TargetValueSet] | None = None,
    t: float = 0.0,
    config: SimulationConfig | None = None,
    anchor: tuple[str, float] | None = None,
    initial_guess: SystemState | None = None,
) -> SystemState:
    """Stationary state: all time derivatives zero, regulator nesting = 0.

    A pressure anchor is required; either a pressure-driven node in the
    network or an explicit ``anchor=(node_id, pressure)``.  With an explicit
    anchor the boundary flows must sum to zero and that node's redundant
    flow balance is replaced by the anchor equation.
    """
    cfg = config or SimulationConfig()
    asm = Assembler(network, cfg.discretization)
    if tvs_map is None:
        tvs_map = neutral_targets(network)

    pressure_driven = [
        nid for nid in network.node_order
        if asm.node_is_pressure_driven(network.nodes[nid])
    ]
    anchor_row = None
    if anchor is not None:
        node_id, p_anchor = anchor
        if node_id not in network.nodes:
            raise NetworkError(f"anchor node {node_id} unknown")
        if p_anchor <= 0.0:
            raise NetworkError("anchor pressure must be positive")
        if not pressure_driven:
            total = 0.0
            for nid in network.node_order:
                node = network.nodes[nid]
                if node.flow_profile is not None:
                    total += profile_eval(node.flow_profile, t)
            if abs(total) > 1e-9:
                raise NetworkError(
                    f"boundary flows sum to {total:.4g} kg/s; a stationary "
                    "state with a pure flow boundary needs zero net inflow"
                )
        anchor_row = network.node_order.index(node_id)
    elif not pressure_driven:
        raise NetworkError(
            "steady solve needs a pressure anchor: no pressure-driven node "
            "and no explicit anchor given"
        )

    xdot = np.zeros(asm.layout.n_vars)

    def residual(x):
        res, jx, _ = asm.assemble(
            x, xdot, t, tvs_map,
            regulator_variant=RegulatorModelVariant.LIMIT,
            alpha=cfg.alpha, with_jacobian=True,
        )
        if anchor_row is not None:
            i = asm.layout.pressure_index[anchor[0]]
            res[anchor_row] = (x[i] - anchor[1]) / reg.PRESSURE_SCALE
            jx[anchor_row, :] = 0.0
            jx[anchor_row, i] = 1.0 / reg.PRESSURE_SCALE
        return res, jx

    if initial_guess is not None:
        x0 = asm.layout.pack(initial_guess)
    else:
        if anchor is not None:
            p0 = anchor[1]
        else:
            node = network.nodes[pressure_driven[0]]
            p0 = profile_eval(node.pressure_profile, t)
        # Seed flows with the boundary throughput scale; an all-zero flow
        # guess sits exactly on a degenerate max/min tie of the regulator
        # nesting where the Jacobian drops rank.
        q_seed = 1.0
        for nid in network.node_order:
            node = network.nodes[nid]
            if node.flow_profile is not None:
                q_seed = max(q_seed, abs(profile_eval(node.flow_profile, t)))
        x0 = np.full(asm.layout.n_vars, q_seed)
        for i in asm.layout.pressure_index.values():
            x0[i] = p0

    x, _, _ = semismooth_newton(
        residual, x0, cfg.newton_tol, max(cfg.newton_max_iter, 100),
        asm.equation_names,
    )
    return asm.layout.unpack(x, t)


def _implicit_residual(asm, cfg, x_prev, t_new, dt, tvs_map):
    def residual(x):
        xdot = (x - x_prev) / dt
        res, jx, jd = asm.assemble(
            x, xdot, t_new, tvs_map,
            regulator_variant=cfg.regulator_variant,
            alpha=cfg.alpha, with_jacobian=True,
        )
        return res, jx + jd / dt

    return residual


def step(
    network: Network,
    state: SystemState,
    t: float,
    config: SimulationConfig,
    schedules: dict[str, TargetValueSchedule],
    asm: Assembler | None = None,
    dt: float | None = None,
    _halvings: int = 0,
) -> tuple[SystemState, int, int]:
    """Advance one step of size dt (default config.dt) from time t.

    Returns (new state, Newton iterations, halvings used).  On Newton
    failure the step is retried as two half steps, up to config.max_halvings
    levels deep; the caller only ever sees states on its own grid.
    """
    if asm is None:
        asm = Assembler(network, config.discretization)
    if dt is None:
        dt = config.dt
    tvs_map = _tvs_map_at(network, schedules, t)
    x_prev = asm.layout.pack(state)
    residual = _implicit_residual(asm, config, x_prev, t + dt, dt, tvs_map)
    try:
        x, iters, _ = semismooth_newton(
            residual, x_prev, config.newton_tol, config.newton_max_iter,
            asm.equation_names,
        )
        return asm.layout.unpack(x, t + dt), iters, _halvings
    except (NewtonError, SingularJacobianError) as exc:
        if _halvings >= config.max_halvings:
            raise StepError(t + dt, exc)
        mid, it1, h1 = step(
            network, state, t, config, schedules, asm, dt / 2.0, _halvings + 1
        )
        end, it2, h2 = step(
            network, mid, t + dt / 2.0, config, schedules, asm, dt / 2.0,
            _halvings + 1,
        )
        return end, it1 + it2, max(h1, h2)


def _diagnose(network, state, tvs_map, ties, iters, halvings) -> StepDiagnostics:
    pushing = {}
    nesting = {}
    for aid in network.regulator_order:
        arc = network.arcs[aid]
        q = state.arc_flows[aid][0]
        pl = state.node_pressures[arc.from_node]
        pr = state.node_pressures[arc.to_node]
        pushing[aid] = pushing_target_value(q, pl, pr, tvs_map[aid])
        nesting[aid], _ = reg.regulator_nesting(q, pl, pr, tvs_map[aid])
    return StepDiagnostics(iters, halvings, ties, pushing, nesting)


def simulate(
    network: Network,
    schedules: dict[str, TargetValueSchedule],
    config: SimulationConfig,
    initial_state: SystemState | None = None,
    t0: float = 0.0,
) -> Trajectory:
    """March the network over the horizon on the configured grid.

    Target values are sampled at each step's start time and held over the
    step.  The initial state defaults to the stationary state with fully
    open regulators.
    """
    asm = Assembler(network, config.discretization)
    if initial_state is None:
        initial_state = solve_steady_state(network, t=t0, config=config)
    n_steps = round(config.horizon / config.dt)

    times = [t0]
    states = [initial_state]
    reg.reset_tie_count()
    diagnostics = [
        _diagnose(network, initial_state, _tvs_map_at(network, schedules, t0),
                  reg.tie_count(), 0, 0)
    ]
    state = initial_state
    for k in range(n_steps):
        t = t0 + k * config.dt
        reg.reset_tie_count()
        try:
            state, iters, halvings = step(network, state, t, config, schedules, asm)
        except StepError:
            raise
        t_new = t0 + (k + 1) * config.dt
        state.time = t_new
        times.append(t_new)
        states.append(state)
        diagnostics.append(
            _diagnose(network, state, _tvs_map_at(network, schedules, t),
                      reg.tie_count(), iters, halvings)
        )
    return Trajectory(times, states, diagnostics)


def linepack(network: Network, state: SystemState) -> float:
    """Total stored gas mass, trapezoidal density average per pipe (kg)."""
    total = 0.0
    con = network.gas
    for aid in network.pipe_order:
        arc = network.arcs[aid]
        geom = arc.payload
        mass = 0.0
        for nid in (arc.from_node, arc.to_node):
            p = state.node_pressures[nid]
            z, _ = network.z_model.evaluate(p)
            mass += p / (z * con.specific_gas_constant * con.temperature)
        total += 0.5 * mass * geom.area * geom.length
    return total


def boundary_inflow(network: Network, state: SystemState) -> float:
    """Net mass flow entering the network across its boundary (kg/s).

    Pressure-driven nodes have a free boundary flow; it is recovered from
    the flow imbalance of the incident arcs.
    """
    total = 0.0
    for nid in network.node_order:
        node = network.nodes[nid]
        if node.pressure_profile is not None:
            imbalance = 0.0
            for a in network.arcs_out(nid):
                imbalance += state.arc_flows[a.id][0]
            for a in network.arcs_in(nid):
                imbalance -= state.arc_flows[a.id][1]
            total += imbalance
        elif node.flow_profile is not None:
            total += profile_eval(node.flow_profile, state.time)
    return total
