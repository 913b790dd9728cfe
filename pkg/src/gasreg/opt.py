"""Coarse-grid optimization model marching and solution assembly.

The optimization-side physics is the linearized pipe model on an implicit
box time grid, combined with the fully adjusted (limit) regulator model.
Marching that system forward for a fixed target value schedule produces a
trajectory that, together with the matching combination choices, is a
feasible point of the time-expanded MILP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim
from .milp import build
from .milp.combos import CellStatus, Combo, ComboCatalog, Mode, operation_value
from .network import (
    Assembler,
    Discretization,
    Network,
    SystemState,
    VariableLayout,
)
from .regulator import (
    Direction,
    RegulatorModelVariant,
    TargetValueSchedule,
    TargetValueSet,
    TargetValueType as TV,
    pushing_target_value,
    schedule_at,
)

BAR = build.BAR


def march_linearized(
    network: Network,
    schedules: dict[str, TargetValueSchedule],
    horizon: float,
    config: build.TvOptConfig,
    initial_state: SystemState,
    t0: float = 0.0,
    newton_tol: float = 1e-10,
) -> tuple[list[float], list[SystemState]]:
    """States of the linearized limit model on the coarse grid.

    Target values are sampled at each step's end: the coarse model treats
    the regulator as instantly adjusted, so the state at a grid time obeys
    the set-points holding at that same time.
    """
    n_steps = horizon / config.dt_opt
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError("dt_opt must divide the horizon")
    n_steps = round(n_steps)
    if not network.linearization:
        network.set_linearization(
            build.linearization_from_state(network, initial_state)
        )
    asm = Assembler(network, Discretization.LINEARIZED_BOX)
    layout = VariableLayout(network)
    dt = config.dt_opt

    times = [t0]
    states = [initial_state]
    x_prev = layout.pack(initial_state)
    for k in range(1, n_steps + 1):
        t = t0 + k * dt
        tvs_map = {aid: schedule_at(schedules[aid], t)
                   for aid in network.regulator_order}

        def residual(x):
            res, jx, jd = asm.assemble(
                x, (x - x_prev) / dt, t, tvs_map,
                RegulatorModelVariant.LIMIT, with_jacobian=True,
            )
            return res, jx + jd / dt

        x, _, _ = sim.semismooth_newton(
            residual, x_prev.copy(), newton_tol, 80, asm.equation_names
        )
        times.append(t)
        states.append(layout.unpack(x, t))
        x_prev = x
    return times, states


def select_combo(state_q: float, p_left: float, p_right: float, tvs,
                 catalog: ComboCatalog) -> Combo:
    """Combination realized by a fully adjusted regulator state."""
    push = pushing_target_value(state_q, p_left, p_right, tvs)
    if push.stable is not None:
        for c in catalog.active_combos:
            if c.stable is push.stable and c.pushing is push.pushing:
                return c
    pool = (catalog.closed_combos
            if push.pushing.direction is Direction.CLOSING
            else catalog.open_combos)
    for c in pool:
        if c.pushing is push.pushing:
            return c
    raise ValueError(f"no catalog combination for pushing {push.pushing}")


def opt_assignment(
    model,
    network: Network,
    times: list[float],
    states: list[SystemState],
    schedules: dict[str, TargetValueSchedule],
    config: build.TvOptConfig,
    catalog: ComboCatalog | None = None,
) -> dict[str, float]:
    """Full variable assignment of the time-expanded model from a marched
    trajectory and its schedule."""
    catalog = catalog or ComboCatalog()
    asg = {}
    for k, state in enumerate(states):
        for nid in network.node_order:
            asg[build.var_p(nid, k)] = state.node_pressures[nid] / BAR
        for aid in network.pipe_order:
            ql, qr = state.arc_flows[aid]
            asg[build.var_ql(aid, k)] = ql
            asg[build.var_qr(aid, k)] = qr
        for aid in network.regulator_order:
            asg[build.var_q(aid, k)] = state.arc_flows[aid][0]

    for aid in network.regulator_order:
        arc = network.arcs[aid]
        sched = schedules[aid]
        tvs0 = schedule_at(sched, times[0])
        prev_tau = {x: build._tau_value_for_model(tvs0.value(x), x, config)
                    for x in catalog.existing_types}
        for k in range(1, len(states)):
            state = states[k]
            tvs = schedule_at(sched, times[k])
            combo = select_combo(
                state.arc_flows[aid][0],
                state.node_pressures[arc.from_node],
                state.node_pressures[arc.to_node],
                tvs, catalog,
            )
            for c in catalog.all_combos:
                asg[build.var_theta(c, aid, k)] = 1.0 if c is combo else 0.0
            for m in Mode:
                asg[build.var_mode(m, aid, k)] = 1.0 if m is combo.mode else 0.0
            tau = {x: build._tau_value_for_model(tvs.value(x), x, config)
                   for x in catalog.existing_types}
            for x, value in tau.items():
                asg[build.var_tau(x, aid, k)] = value
                name = build.var_delta(x, aid, k)
                if name in model.variables:
                    changed = abs(value - prev_tau[x]) > 1e-12
                    asg[name] = 1.0 if changed else 0.0
            prev_tau = tau
    return asg


def combo_for_targets(state_q: float, pl_bar: float, pr_bar: float,
                      tau: dict[TV, float], config: build.TvOptConfig,
                      eps: float, catalog: ComboCatalog) -> Combo | None:
    """Any catalog combination realizable at this operating point under the
    given set points (model units), or None."""
    types = list(catalog.existing_types)
    for combo in catalog.all_combos:
        iv = _combo_intervals(combo, pl_bar, pr_bar, state_q, types,
                              config, eps)
        if iv is None:
            continue
        if all(iv[x][0] - 1e-9 <= tau[x] <= iv[x][1] + 1e-9 for x in types):
            return combo
    return None


def feasibility_assignment(
    model,
    network: Network,
    times: list[float],
    states: list[SystemState],
    schedules: dict[str, TargetValueSchedule],
    config: build.TvOptConfig,
    catalog: ComboCatalog | None = None,
    eps: float | None = None,
) -> dict[str, float]:
    """Assignment of a fixed-target model from any claimed solution.

    Unlike opt_assignment this does not assume the trajectory is the fully
    adjusted regulator response: the combination per step is whichever
    catalog entry the operating point and set points admit.
    """
    catalog = catalog or ComboCatalog()
    if eps is None:
        eps = config.epsilon
    asg = {}
    for k, state in enumerate(states):
        for nid in network.node_order:
            asg[build.var_p(nid, k)] = state.node_pressures[nid] / BAR
        for aid in network.pipe_order:
            ql, qr = state.arc_flows[aid]
            asg[build.var_ql(aid, k)] = ql
            asg[build.var_qr(aid, k)] = qr
        for aid in network.regulator_order:
            asg[build.var_q(aid, k)] = state.arc_flows[aid][0]

    for aid in network.regulator_order:
        arc = network.arcs[aid]
        sched = schedules[aid]
        for k in range(1, len(states)):
            state = states[k]
            tvs = schedule_at(sched, times[k])
            tau = {x: build._tau_value_for_model(tvs.value(x), x, config)
                   for x in catalog.existing_types}
            combo = combo_for_targets(
                state.arc_flows[aid][0],
                state.node_pressures[arc.from_node] / BAR,
                state.node_pressures[arc.to_node] / BAR,
                tau, config, eps, catalog,
            )
            if combo is None:
                combo = select_combo(
                    state.arc_flows[aid][0],
                    state.node_pressures[arc.from_node],
                    state.node_pressures[arc.to_node],
                    tvs, catalog,
                )
            for c in catalog.all_combos:
                asg[build.var_theta(c, aid, k)] = 1.0 if c is combo else 0.0
            for m in Mode:
                asg[build.var_mode(m, aid, k)] = 1.0 if m is combo.mode else 0.0
            for x, value in tau.items():
                asg[build.var_tau(x, aid, k)] = value
                name = build.var_delta(x, aid, k)
                if name in model.variables:
                    asg[name] = 0.0
    return asg


def change_assignment(
    model,
    network: Network,
    times: list[float],
    states: list[SystemState],
    result: "ChangeSearchResult",
    config: build.TvOptConfig,
    catalog: ComboCatalog | None = None,
) -> dict[str, float]:
    """Variable assignment of a free-target model from a change search
    result: combinations and set points come from the search rather than
    from re-deriving the pushing target value."""
    catalog = catalog or ComboCatalog()
    asg = {}
    for k, state in enumerate(states):
        for nid in network.node_order:
            asg[build.var_p(nid, k)] = state.node_pressures[nid] / BAR
        for aid in network.pipe_order:
            ql, qr = state.arc_flows[aid]
            asg[build.var_ql(aid, k)] = ql
            asg[build.var_qr(aid, k)] = qr
        for aid in network.regulator_order:
            asg[build.var_q(aid, k)] = state.arc_flows[aid][0]

    changed_at = {(c.regulator, c.step, c.tv_type) for c in result.changes}
    for aid in network.regulator_order:
        for k in range(1, len(states)):
            combo = result.combos[(aid, k)]
            for c in catalog.all_combos:
                asg[build.var_theta(c, aid, k)] = 1.0 if c is combo else 0.0
            for m in Mode:
                asg[build.var_mode(m, aid, k)] = 1.0 if m is combo.mode else 0.0
            for x, value in result.tau[(aid, k)].items():
                asg[build.var_tau(x, aid, k)] = value
                name = build.var_delta(x, aid, k)
                if name in model.variables:
                    asg[name] = 1.0 if (aid, k, x) in changed_at else 0.0
    return asg


# -- fully prescribed physics ---------------------------------------------

def march_prescribed(
    network: Network,
    horizon: float,
    config: build.TvOptConfig,
    initial_state: SystemState,
    t0: float = 0.0,
) -> tuple[list[float], list[SystemState]]:
    """Trajectory of the linearized model when boundary pressures and flows
    are both prescribed.

    With that much boundary data the physics decouples from the regulator
    behavior: each step is a consistent square (or overdetermined) linear
    system.  An underdetermined step or inconsistent data is an error.
    """
    from .network import NetworkError, profile_eval

    n_steps = horizon / config.dt_opt
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError("dt_opt must divide the horizon")
    n_steps = round(n_steps)
    if not network.linearization:
        network.set_linearization(
            build.linearization_from_state(network, initial_state)
        )

    free_nodes = [nid for nid in network.node_order
                  if network.nodes[nid].pressure_profile is None]
    index: dict[str, int] = {}
    for nid in free_nodes:
        index[f"p_{nid}"] = len(index)
    for aid in network.pipe_order:
        index[f"ql_{aid}"] = len(index)
        index[f"qr_{aid}"] = len(index)
    for aid in network.regulator_order:
        index[f"q_{aid}"] = len(index)
    n_unk = len(index)

    dt = config.dt_opt
    times = [t0]
    states = [initial_state]
    prev = initial_state
    from . import physics

    for k in range(1, n_steps + 1):
        t = t0 + k * dt
        rows, rhs = [], []
        fixed_p = {
            nid: profile_eval(network.nodes[nid].pressure_profile, t) / BAR
            for nid in network.node_order
            if network.nodes[nid].pressure_profile is not None
        }

        def term(row, key, coef):
            row[index[key]] += coef

        for nid in network.node_order:
            node = network.nodes[nid]
            if node.pressure_profile is not None and node.flow_profile is None:
                continue
            row = np.zeros(n_unk)
            r = 0.0
            if node.flow_profile is not None:
                r -= profile_eval(node.flow_profile, t)
            for a in network.arcs_in(nid):
                term(row, f"qr_{a.id}" if a.is_pipe else f"q_{a.id}", 1.0)
            for a in network.arcs_out(nid):
                term(row, f"ql_{a.id}" if a.is_pipe else f"q_{a.id}", -1.0)
            rows.append(row)
            rhs.append(r)

        for aid in network.pipe_order:
            arc = network.arcs[aid]
            geom = arc.payload
            lin = network.linearization[aid]
            kappa = network.gas.kappa(geom.area)
            lam = physics.friction_factor_nikuradse(geom)
            cq = (lin.z_left + lin.z_right) * kappa * dt / geom.length / BAR
            row = np.zeros(n_unk)
            r = (prev.node_pressures[arc.from_node]
                 + prev.node_pressures[arc.to_node]) / BAR
            for nid, sgn in ((arc.from_node, 1.0), (arc.to_node, 1.0)):
                if nid in fixed_p:
                    r -= sgn * fixed_p[nid]
                else:
                    term(row, f"p_{nid}", sgn)
            term(row, f"qr_{aid}", cq)
            term(row, f"ql_{aid}", -cq)
            rows.append(row)
            rhs.append(r)

            cf = lam / (2.0 * geom.diameter) * geom.length / geom.area / BAR
            grav = (geom.slope * network.gas.gravity / kappa
                    * (lin.p_lin_left / lin.z_left + lin.p_lin_right / lin.z_right)
                    * geom.length / geom.area / BAR)
            row = np.zeros(n_unk)
            r = -grav
            for nid, sgn in ((arc.to_node, 1.0), (arc.from_node, -1.0)):
                if nid in fixed_p:
                    r -= sgn * fixed_p[nid]
                else:
                    term(row, f"p_{nid}", sgn)
            term(row, f"ql_{aid}", cf * lin.vbar_left)
            term(row, f"qr_{aid}", cf * lin.vbar_right)
            rows.append(row)
            rhs.append(r)

        A = np.array(rows)
        b = np.array(rhs)
        if np.linalg.matrix_rank(A, tol=1e-9) < n_unk:
            raise NetworkError(
                "prescribed boundary data leaves the physics underdetermined"
            )
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        resid = float(np.max(np.abs(A @ x - b)))
        if resid > 1e-6:
            raise NetworkError(
                f"prescribed boundary data is inconsistent at t={t:.0f} s "
                f"(residual {resid:.3g})"
            )

        pressures = {nid: fixed_p[nid] * BAR for nid in fixed_p}
        for nid in free_nodes:
            pressures[nid] = x[index[f"p_{nid}"]] * BAR
        flows = {}
        for aid in network.pipe_order:
            flows[aid] = (x[index[f"ql_{aid}"]], x[index[f"qr_{aid}"]])
        for aid in network.regulator_order:
            q = x[index[f"q_{aid}"]]
            flows[aid] = (q, q)
        prev = SystemState(pressures, flows, {}, t)
        times.append(t)
        states.append(prev)
    return times, states


# -- exact change minimization --------------------------------------------

@dataclass(frozen=True)
class TvChange:
    regulator: str
    tv_type: TV
    step: int
    time: float  # s past the horizon start
    value: float  # SI units


@dataclass
class ChangeSearchResult:
    objective: int
    changes: list[TvChange]
    combos: dict[tuple[str, int], Combo]
    tau: dict[tuple[str, int], dict[TV, float]]  # model units per step
    schedules: dict[str, TargetValueSchedule]


def _combo_intervals(combo, pl_bar, pr_bar, q, types, config, eps,
                     tol_p=1e-6, tol_q=1e-6):
    """Admissible set-point interval per type, or None if the combination
    cannot be realized at this operating point."""
    if combo.mode in (Mode.OPEN, Mode.ACTIVE) and pl_bar < pr_bar - tol_p:
        return None
    if combo.mode is Mode.OPEN and abs(pl_bar - pr_bar) > tol_p:
        return None
    if combo.mode is Mode.CLOSED and abs(q) > tol_q:
        return None
    if q < -tol_q:
        return None
    out = {}
    for x in types:
        lb, ub = config.bounds_for(x)
        status = combo.cell(x)
        if status is CellStatus.IRRELEVANT:
            out[x] = (lb, ub)
            continue
        is_p = x not in (TV.Q_MAX, TV.Q_MIN)
        o = operation_value(x, pl_bar, pr_bar, q) if is_p else q
        margin = tol_p if is_p else tol_q
        if status is CellStatus.STABLE:
            band = eps * abs(o) + margin
            lo, hi = o - band, o + band
        elif status is CellStatus.VIOLATED:
            lo, hi = ((o - margin, ub) if x in build.MIN_TYPES
                      else (lb, o + margin))
        else:  # satisfied
            lo, hi = ((lb, o + margin) if x in build.MIN_TYPES
                      else (o - margin, ub))
        lo, hi = max(lo, lb), min(hi, ub)
        if lo > hi:
            return None
        out[x] = (lo, hi)
    return out


def minimize_changes(
    network: Network,
    times: list[float],
    states: list[SystemState],
    initial_targets: dict[str, "TargetValueSet"],
    config: build.TvOptConfig,
    catalog: ComboCatalog | None = None,
    eps: float | None = None,
) -> ChangeSearchResult:
    """Exact minimum-change schedule along a fixed operating trajectory.

    Dynamic program over the steps: a search state carries, per target
    type, the interval of set-point values consistent with everything
    since the last change of that type.  Choosing a combination for the
    next step either narrows those intervals (free) or restarts one
    (one change).  The program is run with an iteratively deepened change
    budget: proving each smaller budget infeasible certifies that the
    first feasible one is the true minimum, and the cap keeps the state
    frontier small.
    """
    catalog = catalog or ComboCatalog()
    if eps is None:
        eps = config.epsilon
    types = list(catalog.existing_types)
    total = 0
    all_changes: list[TvChange] = []
    combos: dict[tuple[str, int], Combo] = {}
    tau_out: dict[tuple[str, int], dict[TV, float]] = {}
    schedules: dict[str, TargetValueSchedule] = {}

    for aid in network.regulator_order:
        arc = network.arcs[aid]
        tvs0 = initial_targets[aid]
        tau0 = {x: build._tau_value_for_model(tvs0.value(x), x, config)
                for x in types}

        # per step, the admissible combos with their interval demands
        options = []
        for k in range(1, len(states)):
            s = states[k]
            pl = s.node_pressures[arc.from_node] / BAR
            pr = s.node_pressures[arc.to_node] / BAR
            q = s.arc_flows[aid][0]
            opts = []
            for combo in catalog.all_combos:
                iv = _combo_intervals(combo, pl, pr, q, types, config, eps)
                if iv is not None:
                    opts.append((combo, iv))
            if not opts:
                raise ValueError(
                    f"no admissible combination for regulator {aid} at "
                    f"t={times[k]:.0f} s"
                )
            options.append(opts)

        # intern interval endpoints per type so a search state is a small
        # tuple of ids and intersections become memoized id lookups
        intern: list[dict] = [dict() for _ in types]
        ivals: list[list] = [[] for _ in types]

        def iv_id(xi, lo, hi):
            pair = (round(lo, 6), round(hi, 6))
            idx = intern[xi].get(pair)
            if idx is None:
                idx = len(ivals[xi])
                intern[xi][pair] = idx
                ivals[xi].append(pair)
            return idx

        opt_ids, opt_combos = [], []
        for opts in options:
            ids_k, combos_k = [], []
            for combo, iv in opts:
                ids_k.append(tuple(
                    iv_id(xi, *iv[x]) for xi, x in enumerate(types)
                ))
                combos_k.append(combo)
            opt_ids.append(ids_k)
            opt_combos.append(combos_k)

        ntype = len(types)
        start = tuple(iv_id(xi, tau0[x], tau0[x])
                      for xi, x in enumerate(types))
        trans: list[dict] = [dict() for _ in types]

        def step_iv(xi, cur, opt):
            hit = trans[xi].get((cur, opt))
            if hit is None:
                clo, chi = ivals[xi][cur]
                jlo, jhi = ivals[xi][opt]
                lo = clo if clo > jlo else jlo
                hi = chi if chi < jhi else jhi
                hit = (iv_id(xi, lo, hi), False) if lo <= hi else (opt, True)
                trans[xi][(cur, opt)] = hit
            return hit

        n_steps = len(opt_ids)

        def forward(cap):
            # layer entry: key -> (cost, tie, parent_key, option_index,
            # change_mask); tie carries one bit per change, weighted so that
            # minimizing it pushes every change as late as possible
            layers = [{start: (0, 0, None, -1, 0)}]
            for step, ids_k in enumerate(opt_ids, start=1):
                weight = 1 << (n_steps - step)
                nxt: dict = {}
                for key, entry in layers[-1].items():
                    cost, tie = entry[0], entry[1]
                    for j, oids in enumerate(ids_k):
                        new = []
                        mask = 0
                        add = 0
                        for xi in range(ntype):
                            nid, changed = step_iv(xi, key[xi], oids[xi])
                            new.append(nid)
                            if changed:
                                add += 1
                                mask |= 1 << xi
                        c = cost + add
                        if c > cap:
                            continue
                        s = tie + add * weight
                        nk = tuple(new)
                        old = nxt.get(nk)
                        if (old is None or c < old[0]
                                or (c == old[0] and s < old[1])):
                            nxt[nk] = (c, s, key, j, mask)
                layers.append(nxt)
                if not nxt:
                    return None
            return layers

        # deepen the change budget: the first feasible cap is the optimum,
        # since every smaller budget was proven infeasible
        layers = None
        for cap in range(ntype * len(options) + 1):
            layers = forward(cap)
            if layers is not None:
                break
        if layers is None:
            raise ValueError(f"no feasible schedule for regulator {aid}")

        best_key = min(layers[-1], key=lambda key2: layers[-1][key2][:2])
        best_cost = layers[-1][best_key][0]
        path = []
        key = best_key
        for k in range(len(opt_ids), 0, -1):
            cost, tie, parent, j, mask = layers[k][key]
            combo = opt_combos[k - 1][j]
            changed = frozenset(
                types[xi] for xi in range(ntype) if mask >> xi & 1
            )
            path.append((key, combo, changed))
            key = parent
        path.reverse()

        # reconstruct lazily chosen values per run of each type
        values = {}
        changes_here: list[tuple[int, TV]] = []
        for k, (key, combo, changed) in enumerate(path, start=1):
            combos[(aid, k)] = combo
            for x in changed:
                changes_here.append((k, x))
        current = dict(tau0)
        change_steps = {x: [k for k, y in changes_here if y is x]
                        for x in types}
        for x in types:
            steps_x = change_steps[x]
            for i, k_start in enumerate(steps_x):
                k_end = steps_x[i + 1] - 1 if i + 1 < len(steps_x) else len(path)
                # the stored interval at the run's last step is the full
                # run intersection
                xi = types.index(x)
                lo, hi = ivals[xi][path[k_end - 1][0][xi]]
                # pull in from the endpoints: they carry the admissibility
                # margin, and a value on the margin would sit a hair outside
                # the exact feasible band
                pad = min(1e-4, (hi - lo) / 2.0)
                lo, hi = lo + pad, hi - pad
                prev_val = current[x] if i == 0 else values[(x, steps_x[i - 1])]
                values[(x, k_start)] = min(max(prev_val, lo), hi)
        current = dict(tau0)
        for k in range(1, len(path) + 1):
            for x in types:
                if (x, k) in values:
                    current[x] = values[(x, k)]
            tau_out[(aid, k)] = dict(current)

        def to_si(x, v):
            return v if x in (TV.Q_MAX, TV.Q_MIN) else v * BAR

        for k, x in sorted(changes_here):
            all_changes.append(TvChange(
                aid, x, k, times[k], to_si(x, values[(x, k)])
            ))
        total += best_cost

        events: dict[TV, list[tuple[float, float]]] = {
            x: [(times[0], tvs0.value(x))] for x in types
        }
        for k, x in sorted(changes_here):
            events[x].append((times[k], to_si(x, values[(x, k)])))
        schedules[aid] = TargetValueSchedule(events)

    all_changes.sort(key=lambda c: (c.step, c.tv_type.value))
    return ChangeSearchResult(total, all_changes, combos, tau_out, schedules)
