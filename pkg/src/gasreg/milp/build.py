"""Construction of the time-expanded network MILP.

Pressures are carried in bar and flows in kg/s inside the model, which
keeps all coefficient magnitudes within a few orders of each other.  The
pipe model is the linearized momentum equation combined with the implicit
box scheme in time, with constant per-node gas factors and frozen speed
magnitudes taken from the initial state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .. import physics
from ..network import (
    Network,
    NetworkError,
    PipeLinearization,
    Profile,
    SystemState,
    profile_eval,
)
from ..regulator import (
    TargetValueSchedule,
    TargetValueSet,
    TargetValueType as TV,
    schedule_at,
)
from .combos import Combo, ComboCatalog, Mode
from .model import MilpModel, ModelError, Sense

BAR = 1.0e5

TV_SHORT = {
    TV.P_IN_MIN: "pinmin",
    TV.P_OUT_MAX: "poutmax",
    TV.P_IN_MAX: "pinmax",
    TV.P_OUT_MIN: "poutmin",
    TV.Q_MAX: "qmax",
    TV.Q_MIN: "qmin",
}

MIN_TYPES = (TV.P_IN_MIN, TV.P_OUT_MIN, TV.Q_MIN)


@dataclass(frozen=True)
class TvOptConfig:
    dt_opt: float = 900.0
    epsilon: float = 0.0
    pressure_bounds: tuple[float, float] = (1.0, 100.0)  # bar
    flow_bounds: tuple[float, float] = (-50.0, 50.0)  # kg/s
    tv_bounds: dict = field(default_factory=dict)  # TV -> (lb, ub), model units

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.dt_opt <= 0.0:
            raise ValueError("dt_opt must be positive")
        for lb, ub in (self.pressure_bounds, self.flow_bounds,
                       *self.tv_bounds.values()):
            if lb > ub:
                raise ValueError("lower bound above upper bound")

    def bounds_for(self, tv_type: TV) -> tuple[float, float]:
        if tv_type in self.tv_bounds:
            return self.tv_bounds[tv_type]
        if tv_type in (TV.Q_MAX, TV.Q_MIN):
            return (0.0, self.flow_bounds[1])
        return self.pressure_bounds


def _el(element_id: str) -> str:
    return "".join(ch for ch in element_id if ch.isalnum())


def var_p(node_id: str, k: int) -> str:
    return f"p_{_el(node_id)}_t{k:04d}"


def var_ql(arc_id: str, k: int) -> str:
    return f"ql_{_el(arc_id)}_t{k:04d}"


def var_qr(arc_id: str, k: int) -> str:
    return f"qr_{_el(arc_id)}_t{k:04d}"


def var_q(arc_id: str, k: int) -> str:
    return f"q_{_el(arc_id)}_t{k:04d}"


def var_mode(mode: Mode, arc_id: str, k: int) -> str:
    return f"m_{mode.value}_{_el(arc_id)}_t{k:04d}"


def var_theta(combo: Combo, arc_id: str, k: int) -> str:
    return f"th_{combo.key}_{_el(arc_id)}_t{k:04d}"


def var_tau(tv_type: TV, arc_id: str, k: int) -> str:
    return f"tau_{TV_SHORT[tv_type]}_{_el(arc_id)}_t{k:04d}"


def var_delta(tv_type: TV, arc_id: str, k: int) -> str:
    return f"d_{TV_SHORT[tv_type]}_{_el(arc_id)}_t{k:04d}"


def operation_point(tv_type: TV, arc_id: str, from_node: str, to_node: str,
                    k: int) -> str:
    """Model variable holding the operating point of a target type."""
    if tv_type in (TV.P_IN_MIN, TV.P_IN_MAX):
        return var_p(from_node, k)
    if tv_type in (TV.P_OUT_MIN, TV.P_OUT_MAX):
        return var_p(to_node, k)
    return var_q(arc_id, k)


def build_basic_regulator(model: MilpModel, arc_id: str, from_node: str,
                          to_node: str, k: int) -> list[str]:
    """Mode binaries and the four mode relations of one regulator-step."""
    el = _el(arc_id)
    pl, pr, q = var_p(from_node, k), var_p(to_node, k), var_q(arc_id, k)
    modes = {m: model.add_variable(var_mode(m, arc_id, k), 0, 1, binary=True)
             for m in Mode}
    names = []
    names.append(model.add_constraint(
        f"modesum_{el}_t{k:04d}",
        [(modes[m], 1.0) for m in Mode], Sense.EQ, 1.0,
    ).name)
    names.append(model.add_indicator(
        f"noexpand_{el}_t{k:04d}", (modes[Mode.OPEN], modes[Mode.CHECK_VALVE]),
        1, [(pl, 1.0), (pr, -1.0)], Sense.LE, 0.0,
    ).name)
    names.append(model.add_indicator(
        f"nocompress_{el}_t{k:04d}", (modes[Mode.ACTIVE], modes[Mode.OPEN]),
        1, [(pl, 1.0), (pr, -1.0)], Sense.GE, 0.0,
    ).name)
    names.append(model.add_indicator(
        f"closedflow_{el}_t{k:04d}", (modes[Mode.CLOSED], modes[Mode.CHECK_VALVE]),
        1, [(q, 1.0)], Sense.LE, 0.0,
    ).name)
    names.append(model.add_constraint(
        f"noback_{el}_t{k:04d}", [(q, 1.0)], Sense.GE, 0.0,
    ).name)
    return names


def build_tv_constraints(model: MilpModel, arc_id: str, from_node: str,
                         to_node: str, k: int, catalog: ComboCatalog,
                         config: TvOptConfig, with_delta: bool) -> list[str]:
    """Combination choice, target-operating-point links and change flags."""
    el = _el(arc_id)
    names = []
    thetas = {c: model.add_variable(var_theta(c, arc_id, k), 0, 1, binary=True)
              for c in catalog.all_combos}

    for mode in (Mode.ACTIVE, Mode.OPEN, Mode.CLOSED):
        coeffs = [(var_mode(mode, arc_id, k), 1.0)]
        coeffs += [(thetas[c], -1.0) for c in catalog.for_mode(mode)]
        names.append(model.add_constraint(
            f"combo_{mode.value}_{el}_t{k:04d}", coeffs, Sense.EQ, 0.0,
        ).name)

    eps = config.epsilon
    for x in catalog.existing_types:
        tau = var_tau(x, arc_id, k)
        if tau not in model.variables:
            lb, ub = config.bounds_for(x)
            model.add_variable(tau, lb, ub)
        oper = operation_point(x, arc_id, from_node, to_node, k)

        stable_set = [thetas[c] for c in catalog.all_combos if c.stable is x]
        if stable_set:
            names.append(model.add_indicator(
                f"stab_hi_{TV_SHORT[x]}_{el}_t{k:04d}", tuple(stable_set), 1,
                [(tau, 1.0), (oper, -(1.0 + eps))], Sense.LE, 0.0,
            ).name)
            names.append(model.add_indicator(
                f"stab_lo_{TV_SHORT[x]}_{el}_t{k:04d}", tuple(stable_set), 1,
                [(tau, 1.0), (oper, -(1.0 - eps))], Sense.GE, 0.0,
            ).name)

        violated_set = [thetas[c] for c in catalog.all_combos if c.pushing is x]
        if violated_set:
            sense = Sense.GE if x in MIN_TYPES else Sense.LE
            names.append(model.add_indicator(
                f"viol_{TV_SHORT[x]}_{el}_t{k:04d}", tuple(violated_set), 1,
                [(tau, 1.0), (oper, -1.0)], sense, 0.0,
            ).name)

        satisfied_set = [
            thetas[c] for c in catalog.all_combos
            if c.stable is not x and x.priority > c.pushing.priority
        ]
        if satisfied_set:
            sense = Sense.LE if x in MIN_TYPES else Sense.GE
            names.append(model.add_indicator(
                f"sat_{TV_SHORT[x]}_{el}_t{k:04d}", tuple(satisfied_set), 1,
                [(tau, 1.0), (oper, -1.0)], sense, 0.0,
            ).name)

        if with_delta:
            prev = var_tau(x, arc_id, k - 1)
            if prev not in model.variables:
                raise ModelError(
                    f"previous-step target variable {prev} missing"
                )
            delta = model.add_variable(var_delta(x, arc_id, k), 0, 1, binary=True)
            names.append(model.add_indicator(
                f"keep_{TV_SHORT[x]}_{el}_t{k:04d}", (delta,), 0,
                [(tau, 1.0), (prev, -1.0)], Sense.EQ, 0.0,
            ).name)
    return names


def build_objective(model: MilpModel):
    """Minimize the number of target value changes after the start."""
    deltas = [(name, 1.0) for name in model.variables if name.startswith("d_")]
    model.set_objective(deltas, "min")


def linearization_from_state(network: Network, state: SystemState,
                             z_model=None) -> dict[str, PipeLinearization]:
    """Per-pipe constant gas factors and speed magnitudes for the linear model.

    The gas factor is evaluated per node at the given state; the speed
    magnitude per pipe end follows from the state's pressures and flows.
    """
    if z_model is None:
        z_model = physics.GasFactorModel.quadratic_papay(network.gas.temperature)
    out = {}
    for aid in network.pipe_order:
        arc = network.arcs[aid]
        geom = arc.payload
        kappa = network.gas.kappa(geom.area)
        pl = state.node_pressures[arc.from_node]
        pr = state.node_pressures[arc.to_node]
        ql, qr = state.arc_flows[aid]
        zl, _ = z_model.evaluate(pl)
        zr, _ = z_model.evaluate(pr)
        out[aid] = PipeLinearization(
            z_left=zl, z_right=zr,
            vbar_left=abs(zl * kappa * ql / pl),
            vbar_right=abs(zr * kappa * qr / pr),
            p_lin_left=pl, p_lin_right=pr,
        )
    return out


def _tau_value_for_model(value: float, tv_type: TV, config: TvOptConfig) -> float:
    """Scenario target in model units; infinities land on the variable bound."""
    lb, ub = config.bounds_for(tv_type)
    if not math.isfinite(value):
        return ub if value > 0 else lb
    if tv_type in (TV.Q_MAX, TV.Q_MIN):
        return min(max(value, lb), ub)
    return min(max(value / BAR, lb), ub)


def build_network_milp(
    network: Network,
    horizon: float,
    config: TvOptConfig,
    initial_state: SystemState,
    schedules: dict[str, TargetValueSchedule] | None = None,
    initial_targets: dict[str, TargetValueSet] | None = None,
    t0: float = 0.0,
) -> MilpModel:
    """Time-expanded model over ``horizon`` seconds in dt_opt steps.

    With ``schedules`` the target values are data and the model is a pure
    feasibility problem; without them the targets are free decision
    variables initialized from ``initial_targets`` and penalized per change.
    """
    n_steps = horizon / config.dt_opt
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError("dt_opt must divide the horizon")
    n_steps = round(n_steps)
    if schedules is None and initial_targets is None:
        raise ModelError("free-target model needs initial target values")
    if not network.linearization:
        network.set_linearization(linearization_from_state(network, initial_state))

    model = MilpModel("gasnet")
    p_lb, p_ub = config.pressure_bounds
    q_lb, q_ub = config.flow_bounds
    catalog = ComboCatalog()

    # variables step by step, element by element
    for k in range(n_steps + 1):
        for nid in network.node_order:
            model.add_variable(var_p(nid, k), p_lb, p_ub)
        for aid in network.pipe_order:
            model.add_variable(var_ql(aid, k), q_lb, q_ub)
            model.add_variable(var_qr(aid, k), q_lb, q_ub)
        for aid in network.regulator_order:
            model.add_variable(var_q(aid, k), max(q_lb, 0.0), q_ub)

    # initial state is data
    for nid in network.node_order:
        p0 = initial_state.node_pressures[nid] / BAR
        model.fix_variable(var_p(nid, 0), p0)
    for aid in network.pipe_order:
        ql0, qr0 = initial_state.arc_flows[aid]
        model.fix_variable(var_ql(aid, 0), ql0)
        model.fix_variable(var_qr(aid, 0), qr0)
    for aid in network.regulator_order:
        model.fix_variable(var_q(aid, 0), initial_state.arc_flows[aid][0])

    dt = config.dt_opt
    for k in range(1, n_steps + 1):
        t = t0 + k * dt
        for nid in network.node_order:
            node = network.nodes[nid]
            if node.pressure_profile is not None:
                model.fix_variable(
                    var_p(nid, k), profile_eval(node.pressure_profile, t) / BAR
                )
                if node.flow_profile is None:
                    continue
                # both pressure and flow prescribed: the balance stays as a
                # constraint, pinning the physics completely
            coeffs = []
            rhs = 0.0
            if node.flow_profile is not None:
                rhs -= profile_eval(node.flow_profile, t)
            for a in network.arcs_in(nid):
                name = var_qr(a.id, k) if a.is_pipe else var_q(a.id, k)
                coeffs.append((name, 1.0))
            for a in network.arcs_out(nid):
                name = var_ql(a.id, k) if a.is_pipe else var_q(a.id, k)
                coeffs.append((name, -1.0))
            model.add_constraint(f"bal_{_el(nid)}_t{k:04d}", coeffs, Sense.EQ, rhs)

        for aid in network.pipe_order:
            arc = network.arcs[aid]
            geom = arc.payload
            lin = network.linearization[aid]
            kappa = network.gas.kappa(geom.area)
            lam = physics.friction_factor_nikuradse(geom)
            pl_k, pr_k = var_p(arc.from_node, k), var_p(arc.to_node, k)
            pl_p, pr_p = var_p(arc.from_node, k - 1), var_p(arc.to_node, k - 1)
            ql_k, qr_k = var_ql(aid, k), var_qr(aid, k)

            # implicit box continuity, scaled to bar
            cq = (lin.z_left + lin.z_right) * kappa * dt / geom.length / BAR
            model.add_constraint(
                f"cont_{_el(aid)}_t{k:04d}",
                [(pl_k, 1.0), (pr_k, 1.0), (pl_p, -1.0), (pr_p, -1.0),
                 (qr_k, cq), (ql_k, -cq)],
                Sense.EQ, 0.0,
            )

            # linearized momentum, scaled to bar pressure drop
            cf = lam / (2.0 * geom.diameter) * geom.length / geom.area / BAR
            grav = (geom.slope * network.gas.gravity / kappa
                    * (lin.p_lin_left / lin.z_left + lin.p_lin_right / lin.z_right)
                    * geom.length / geom.area / BAR)
            model.add_constraint(
                f"mom_{_el(aid)}_t{k:04d}",
                [(pr_k, 1.0), (pl_k, -1.0),
                 (ql_k, cf * lin.vbar_left), (qr_k, cf * lin.vbar_right)],
                Sense.EQ, -grav,
            )

        for aid in network.regulator_order:
            arc = network.arcs[aid]
            build_basic_regulator(model, aid, arc.from_node, arc.to_node, k)
            # with a prescribed schedule the change count is data, so the
            # delta machinery only exists in the free-target model
            build_tv_constraints(model, aid, arc.from_node, arc.to_node, k,
                                 catalog, config,
                                 with_delta=schedules is None and k > 1)

    # target values: initial step is data, later steps either data or free
    for aid in network.regulator_order:
        if schedules is not None:
            sched = schedules[aid]
            for k in range(1, n_steps + 1):
                tvs = schedule_at(sched, t0 + k * dt)
                for x in catalog.existing_types:
                    value = _tau_value_for_model(tvs.value(x), x, config)
                    model.fix_variable(var_tau(x, aid, k), value)
        else:
            tvs0 = initial_targets[aid]
            for x in catalog.existing_types:
                tau1 = var_tau(x, aid, 1)
                value0 = _tau_value_for_model(tvs0.value(x), x, config)
                # the first optimization step starts from the given targets;
                # it may change them (delta exists from k = 2 on, so a k = 1
                # deviation from the initial value must be flagged too)
                delta1 = model.add_variable(var_delta(x, aid, 1), 0, 1,
                                            binary=True)
                model.add_indicator(
                    f"keep_{TV_SHORT[x]}_{_el(aid)}_t0001", (delta1,), 0,
                    [(tau1, 1.0)], Sense.EQ, value0,
                )
            if TV.Q_MIN in catalog.existing_types:
                for k in range(1, n_steps + 1):
                    ub = config.bounds_for(TV.Q_MIN)[1]
                    model.fix_variable(var_tau(TV.Q_MIN, aid, k), ub)

    build_objective(model)
    return model
