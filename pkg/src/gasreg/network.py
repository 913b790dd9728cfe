"""Directed-graph gas network and assembly of the DAE residual.

The network couples per-pipe discretizations with Kirchhoff flow balances
at the nodes and one control equation per regulator.  Assembly produces a
square residual together with its analytic Jacobian, with the active
max/min branch of each regulator selected by one-sided derivatives.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import physics, regulator as reg
from .physics import GasConstants, GasFactorModel, PipeGeometry
from .regulator import RegulatorSpec, TargetValueSet


class NetworkError(ValueError):
    pass


class ProfileKind(enum.Enum):
    PIECEWISE_CONSTANT = "piecewise_constant"
    PIECEWISE_LINEAR = "piecewise_linear"


@dataclass(frozen=True)
class Profile:
    """Time profile over the scenario horizon.

    Piecewise-constant profiles are right-continuous at their breakpoints;
    piecewise-linear ones interpolate.
    """

    kind: ProfileKind
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("profile needs at least one breakpoint")
        times = [t for t, _ in self.points]
        if any(a >= b for a, b in zip(times, times[1:])):
            raise ValueError("profile breakpoints must be strictly increasing")

    @staticmethod
    def constant(value: float, t0: float = 0.0) -> "Profile":
        return Profile(ProfileKind.PIECEWISE_CONSTANT, ((t0, value),))


def profile_eval(profile: Profile, t: float, horizon: float | None = None) -> float:
    """Evaluate a profile at time t, right-continuous at breakpoints."""
    t0 = profile.points[0][0]
    if t < t0 or (horizon is not None and t > horizon):
        raise ValueError(f"t = {t} outside the profile horizon")
    if profile.kind is ProfileKind.PIECEWISE_CONSTANT:
        value = profile.points[0][1]
        for time, v in profile.points:
            if time <= t:
                value = v
            else:
                break
        return value
    # piecewise linear; constant extrapolation beyond the last breakpoint
    pts = profile.points
    if t >= pts[-1][0]:
        return pts[-1][1]
    for (ta, va), (tb, vb) in zip(pts, pts[1:]):
        if ta <= t <= tb:
            w = (t - ta) / (tb - ta)
            return va + w * (vb - va)
    raise AssertionError("unreachable")


class NodeKind(enum.Enum):
    INTERIOR = "interior"
    ENTRY = "entry"
    EXIT = "exit"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind = NodeKind.INTERIOR
    flow_profile: Profile | None = None
    pressure_profile: Profile | None = None
    height: float = 0.0

    def __post_init__(self):
        if self.kind is NodeKind.INTERIOR and (
            self.flow_profile is not None or self.pressure_profile is not None
        ):
            raise NetworkError(f"interior node {self.id} cannot carry boundary profiles")


@dataclass(frozen=True)
class Arc:
    id: str
    from_node: str
    to_node: str
    payload: PipeGeometry | RegulatorSpec

    @property
    def is_pipe(self) -> bool:
        return isinstance(self.payload, PipeGeometry)


@dataclass(frozen=True)
class PipeLinearization:
    """Frozen data for the linearized pipe model: constant z and speed
    magnitudes per end, plus the gravity linearization pressures."""

    z_left: float
    z_right: float
    vbar_left: float
    vbar_right: float
    p_lin_left: float = 0.0
    p_lin_right: float = 0.0


class Network:
    """Immutable network of pipes and regulators."""

    def __init__(
        self,
        nodes: list[Node],
        arcs: list[Arc],
        gas: GasConstants,
        z_model: GasFactorModel,
        chi: int = 0,
    ):
        if chi != 0:
            raise NetworkError(
                "chi = 1 (inertia term retained) is out of scope; only the "
                "friction-dominated chi = 0 model is implemented"
            )
        self.nodes = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise NetworkError("duplicate node ids")
        self.arcs = {a.id: a for a in arcs}
        if len(self.arcs) != len(arcs):
            raise NetworkError("duplicate arc ids")
        self.gas = gas
        self.z_model = z_model
        self.linearization: dict[str, PipeLinearization] = {}

        for a in arcs:
            if a.from_node == a.to_node:
                raise NetworkError(f"arc {a.id} is a self-loop")
            for nid in (a.from_node, a.to_node):
                if nid not in self.nodes:
                    raise NetworkError(f"arc {a.id} references unknown node {nid}")
        self._check_connected()
        self._check_regulator_adjacency()

        self.node_order = [n.id for n in nodes]
        self.pipe_order = [a.id for a in arcs if a.is_pipe]
        self.regulator_order = [a.id for a in arcs if not a.is_pipe]

    def _check_connected(self):
        if not self.nodes:
            raise NetworkError("empty network")
        seen = set()
        stack = [next(iter(self.nodes))]
        while stack:
            nid = stack.pop()
            if nid in seen:
                continue
            seen.add(nid)
            for a in self.arcs.values():
                if a.from_node == nid:
                    stack.append(a.to_node)
                elif a.to_node == nid:
                    stack.append(a.from_node)
        if seen != set(self.nodes):
            raise NetworkError("network graph is not connected")

    def _check_regulator_adjacency(self):
        for a in self.arcs.values():
            if a.is_pipe:
                continue
            for nid in (a.from_node, a.to_node):
                has_pipe = any(
                    other.is_pipe and nid in (other.from_node, other.to_node)
                    for other in self.arcs.values()
                )
                if not has_pipe:
                    raise NetworkError(
                        f"regulator {a.id} needs a pipe-incident node on each "
                        f"side; node {nid} has none"
                    )

    def arcs_in(self, node_id: str) -> list[Arc]:
        return [a for a in self.arcs.values() if a.to_node == node_id]

    def arcs_out(self, node_id: str) -> list[Arc]:
        return [a for a in self.arcs.values() if a.from_node == node_id]

    @property
    def n_vars(self) -> int:
        return len(self.node_order) + 2 * len(self.pipe_order) + len(self.regulator_order)

    def set_linearization(self, data: dict[str, PipeLinearization]):
        missing = set(self.pipe_order) - set(data)
        if missing:
            raise NetworkError(f"linearization data missing for pipes {sorted(missing)}")
        self.linearization = dict(data)


@dataclass
class SystemState:
    """Node pressures and arc flows at one instant."""

    node_pressures: dict[str, float]
    arc_flows: dict[str, tuple[float, float]]
    regulator_modes: dict[str, str] = field(default_factory=dict)
    time: float = 0.0

    def __post_init__(self):
        for nid, p in self.node_pressures.items():
            if p <= 0.0:
                raise ValueError(f"nonpositive pressure at node {nid}")
        for aid, (ql, qr) in self.arc_flows.items():
            pass


class Discretization(enum.Enum):
    LEFT_RIGHT = "leftright"
    TRAPEZOIDAL = "trapezoidal"
    LINEARIZED_BOX = "linearizedbox"


# --- variable indexing ----------------------------------------------------


class VariableLayout:
    """Maps network quantities onto a flat state vector.

    Order: node pressures, then (q_left, q_right) per pipe, then one flow
    per regulator.
    """

    def __init__(self, network: Network):
        self.network = network
        self.pressure_index = {nid: i for i, nid in enumerate(network.node_order)}
        base = len(network.node_order)
        self.pipe_flow_index = {}
        for k, aid in enumerate(network.pipe_order):
            self.pipe_flow_index[aid] = (base + 2 * k, base + 2 * k + 1)
        base += 2 * len(network.pipe_order)
        self.regulator_flow_index = {
            aid: base + k for k, aid in enumerate(network.regulator_order)
        }
        self.n_vars = network.n_vars

    def arc_end_flow_indices(self, arc: Arc) -> tuple[int, int]:
        if arc.is_pipe:
            return self.pipe_flow_index[arc.id]
        i = self.regulator_flow_index[arc.id]
        return i, i

    def pack(self, state: SystemState) -> np.ndarray:
        x = np.empty(self.n_vars)
        for nid, i in self.pressure_index.items():
            x[i] = state.node_pressures[nid]
        for aid, (il, ir) in self.pipe_flow_index.items():
            x[il], x[ir] = state.arc_flows[aid]
        for aid, i in self.regulator_flow_index.items():
            x[i] = state.arc_flows[aid][0]
        return x

    def unpack(self, x: np.ndarray, t: float) -> SystemState:
        pressures = {nid: float(x[i]) for nid, i in self.pressure_index.items()}
        flows = {}
        for aid, (il, ir) in self.pipe_flow_index.items():
            flows[aid] = (float(x[il]), float(x[ir]))
        for aid, i in self.regulator_flow_index.items():
            flows[aid] = (float(x[i]), float(x[i]))
        return SystemState(pressures, flows, {}, t)


# --- residual assembly ----------------------------------------------------


def flow_balance_residual(network: Network, node_id: str, state: SystemState, t: float) -> float:
    """Kirchhoff mass balance at one node: boundary inflow plus arriving
    arc flows minus departing arc flows."""
    node = network.nodes[node_id]
    total = 0.0
    if node.flow_profile is not None:
        total += profile_eval(node.flow_profile, t)
    for a in network.arcs_in(node_id):
        total += state.arc_flows[a.id][1]
    for a in network.arcs_out(node_id):
        total -= state.arc_flows[a.id][0]
    return total


def pressure_coupling(network: Network, node_id: str, state: SystemState) -> list[float]:
    """Arc-end minus node pressure residuals; zero by construction since arc
    ends reference the node pressure variables directly.  Exists only as a
    validation check against corrupted states."""
    p_node = state.node_pressures[node_id]
    residuals = []
    for a in network.arcs_in(node_id):
        residuals.append(state.node_pressures[a.to_node] - p_node)
    for a in network.arcs_out(node_id):
        residuals.append(state.node_pressures[a.from_node] - p_node)
    return residuals


class Assembler:
    """Builds the square DAE residual F(x, xdot, t) = 0 and its Jacobians.

    Equation order: one per node (flow balance, or pressure prescription at
    pressure-driven nodes), two per pipe (continuity, momentum), one per
    regulator.  Rows are scaled to comparable magnitudes so a single Newton
    tolerance applies.
    """

    def __init__(
        self,
        network: Network,
        discretization: Discretization,
        u_p: float = reg.PRESSURE_SCALE,
        u_q: float = reg.FLOW_SCALE,
    ):
        self.network = network
        self.layout = VariableLayout(network)
        self.disc = discretization
        self.u_p = u_p
        self.u_q = u_q
        if discretization is Discretization.LINEARIZED_BOX and not network.linearization:
            raise NetworkError("linearized box scheme requires pipe linearization data")

        self.n = self.layout.n_vars
        self.equation_names: list[str] = []
        for nid in network.node_order:
            self.equation_names.append(f"node:{nid}")
        for aid in network.pipe_order:
            self.equation_names.append(f"continuity:{aid}")
            self.equation_names.append(f"momentum:{aid}")
        for aid in network.regulator_order:
            self.equation_names.append(f"regulator:{aid}")

    def node_is_pressure_driven(self, node: Node) -> bool:
        return node.pressure_profile is not None

    def assemble(
        self,
        x: np.ndarray,
        xdot: np.ndarray,
        t: float,
        tvs_map: dict[str, TargetValueSet],
        regulator_variant: reg.RegulatorModelVariant = reg.RegulatorModelVariant.ODE,
        alpha: float = 1.0e3,
        with_jacobian: bool = False,
    ):
        """Return (residual, J_x, J_xdot); the Jacobians are None unless
        requested."""
        net = self.network
        lay = self.layout
        if x.shape != (self.n,):
            raise ValueError(f"state dimension {x.shape} != ({self.n},)")
        res = np.zeros(self.n)
        jx = np.zeros((self.n, self.n)) if with_jacobian else None
        jd = np.zeros((self.n, self.n)) if with_jacobian else None

        row = 0
        for nid in net.node_order:
            node = net.nodes[nid]
            incident = net.arcs_in(nid) + net.arcs_out(nid)
            if not incident:
                raise NetworkError(f"node {nid} has no incident arcs")
            if self.node_is_pressure_driven(node):
                target = profile_eval(node.pressure_profile, t)
                res[row] = (x[lay.pressure_index[nid]] - target) / self.u_p
                if with_jacobian:
                    jx[row, lay.pressure_index[nid]] = 1.0 / self.u_p
            else:
                total = 0.0
                if node.flow_profile is not None:
                    total += profile_eval(node.flow_profile, t)
                for a in net.arcs_in(nid):
                    i = lay.arc_end_flow_indices(a)[1]
                    total += x[i]
                    if with_jacobian:
                        jx[row, i] += 1.0 / self.u_q
                for a in net.arcs_out(nid):
                    i = lay.arc_end_flow_indices(a)[0]
                    total -= x[i]
                    if with_jacobian:
                        jx[row, i] -= 1.0 / self.u_q
                res[row] = total / self.u_q
            row += 1

        for aid in net.pipe_order:
            arc = net.arcs[aid]
            row = self._pipe_rows(res, jx, jd, row, arc, x, xdot, with_jacobian)

        for aid in net.regulator_order:
            arc = net.arcs[aid]
            row = self._regulator_row(
                res, jx, jd, row, arc, x, xdot, tvs_map[aid],
                regulator_variant, alpha, with_jacobian,
            )
        assert row == self.n
        return res, jx, jd

    # -- pipes ------------------------------------------------------------

    def _pipe_rows(self, res, jx, jd, row, arc, x, xdot, with_jac):
        net = self.network
        lay = self.layout
        geom: PipeGeometry = arc.payload
        model = net.z_model
        con = net.gas
        il_p = lay.pressure_index[arc.from_node]
        ir_p = lay.pressure_index[arc.to_node]
        il_q, ir_q = lay.pipe_flow_index[arc.id]
        pl, pr = x[il_p], x[ir_p]
        ql, qr = x[il_q], x[ir_q]
        kappa = con.kappa(geom.area)
        L = geom.length
        lam = physics.friction_factor_nikuradse(geom)
        scale_cont = kappa * self.u_q / L
        scale_mom = geom.area * self.u_p / L

        if self.disc is Discretization.LINEARIZED_BOX:
            lin = net.linearization[arc.id]
            zl, zr = lin.z_left, lin.z_right
            # continuity: dpl + dpr + (zl + zr) kappa (qr - ql)/L = 0
            res[row] = (xdot[il_p] + xdot[ir_p] + (zl + zr) * kappa * (qr - ql) / L) / scale_cont
            if with_jac:
                jd[row, il_p] = 1.0 / scale_cont
                jd[row, ir_p] = 1.0 / scale_cont
                jx[row, ir_q] = (zl + zr) * kappa / L / scale_cont
                jx[row, il_q] = -(zl + zr) * kappa / L / scale_cont
            row += 1
            grav = geom.slope * con.gravity / kappa * (
                lin.p_lin_left / zl + lin.p_lin_right / zr
            )
            res[row] = (
                geom.area * (pr - pl) / L
                + lam / (2.0 * geom.diameter) * (ql * lin.vbar_left + qr * lin.vbar_right)
                + grav
            ) / scale_mom
            if with_jac:
                jx[row, ir_p] = geom.area / L / scale_mom
                jx[row, il_p] = -geom.area / L / scale_mom
                jx[row, il_q] = lam / (2.0 * geom.diameter) * lin.vbar_left / scale_mom
                jx[row, ir_q] = lam / (2.0 * geom.diameter) * lin.vbar_right / scale_mom
            row += 1
            return row

        if pl <= 0.0 or pr <= 0.0:
            raise ZeroDivisionError(f"nonpositive pressure on pipe {arc.id}")

        if self.disc is Discretization.LEFT_RIGHT:
            B = physics.bracket_term(model, pr)
            res[row] = (xdot[ir_p] + B * kappa * (qr - ql) / L) / scale_cont
            if with_jac:
                dB = physics.bracket_term_derivative(model, pr)
                jd[row, ir_p] = 1.0 / scale_cont
                jx[row, ir_p] = dB * kappa * (qr - ql) / L / scale_cont
                jx[row, ir_q] = B * kappa / L / scale_cont
                jx[row, il_q] = -B * kappa / L / scale_cont
            row += 1
            res[row], jac = self._momentum_one_sided(geom, pl, pr, ql, lam, kappa, with_jac)
            res[row] /= scale_mom
            if with_jac:
                dpl, dpr, dql = jac
                jx[row, il_p] = dpl / scale_mom
                jx[row, ir_p] = dpr / scale_mom
                jx[row, il_q] = dql / scale_mom
            row += 1
            return row

        # trapezoidal
        Bl = physics.bracket_term(model, pl)
        Br = physics.bracket_term(model, pr)
        res[row] = (xdot[il_p] + xdot[ir_p] + (Bl + Br) * kappa * (qr - ql) / L) / scale_cont
        if with_jac:
            jd[row, il_p] = 1.0 / scale_cont
            jd[row, ir_p] = 1.0 / scale_cont
            jx[row, il_p] = physics.bracket_term_derivative(model, pl) * kappa * (qr - ql) / L / scale_cont
            jx[row, ir_p] = physics.bracket_term_derivative(model, pr) * kappa * (qr - ql) / L / scale_cont
            jx[row, ir_q] = (Bl + Br) * kappa / L / scale_cont
            jx[row, il_q] = -(Bl + Br) * kappa / L / scale_cont
        row += 1

        rl, jac_l = self._friction_gravity(geom, pl, ql, lam, kappa, with_jac)
        rr, jac_r = self._friction_gravity(geom, pr, qr, lam, kappa, with_jac)
        res[row] = (geom.area * (pr - pl) / L + rl + rr) / scale_mom
        if with_jac:
            jx[row, il_p] = (-geom.area / L + jac_l[0]) / scale_mom
            jx[row, ir_p] = (geom.area / L + jac_r[0]) / scale_mom
            jx[row, il_q] = jac_l[1] / scale_mom
            jx[row, ir_q] = jac_r[1] / scale_mom
        row += 1
        return row

    def _friction_gravity(self, geom, p, q, lam, kappa, with_jac):
        """Friction + gravity contribution of one pipe end."""
        con = self.network.gas
        z, dz = self.network.z_model.evaluate(p)
        fr = lam / (2.0 * geom.diameter) * kappa * z * q * abs(q) / p
        gr = geom.slope * con.gravity / kappa * p / z
        if not with_jac:
            return fr + gr, None
        dfr_dp = lam / (2.0 * geom.diameter) * kappa * q * abs(q) * (dz * p - z) / p**2
        dfr_dq = lam / (2.0 * geom.diameter) * kappa * z / p * 2.0 * abs(q)
        dgr_dp = geom.slope * con.gravity / kappa * (z - p * dz) / z**2
        return fr + gr, (dfr_dp + dgr_dp, dfr_dq)

    def _momentum_one_sided(self, geom, pl, pr, ql, lam, kappa, with_jac):
        fg, jac = self._friction_gravity(geom, pl, ql, lam, kappa, with_jac)
        value = geom.area * (pr - pl) / geom.length + fg
        if not with_jac:
            return value, None
        dpl = -geom.area / geom.length + jac[0]
        dpr = geom.area / geom.length
        return value, (dpl, dpr, jac[1])

    # -- regulators -------------------------------------------------------

    def _regulator_row(
        self, res, jx, jd, row, arc, x, xdot, tvs, variant, alpha, with_jac
    ):
        lay = self.layout
        iq = lay.regulator_flow_index[arc.id]
        il_p = lay.pressure_index[arc.from_node]
        ir_p = lay.pressure_index[arc.to_node]
        q, pl, pr = x[iq], x[il_p], x[ir_p]
        phi, grad = reg.regulator_nesting(q, pl, pr, tvs, self.u_p, self.u_q)
        gq, gpl, gpr = grad

        if variant is reg.RegulatorModelVariant.LIMIT:
            res[row] = phi
            if with_jac:
                jx[row, iq] = gq
                jx[row, il_p] = gpl
                jx[row, ir_p] = gpr
        elif variant is reg.RegulatorModelVariant.ODE:
            scale = alpha * self.u_q
            res[row] = (xdot[iq] - alpha * self.u_q * phi) / scale
            if with_jac:
                jd[row, iq] = 1.0 / scale
                jx[row, iq] = -alpha * self.u_q * gq / scale
                jx[row, il_p] = -alpha * self.u_q * gpl / scale
                jx[row, ir_p] = -alpha * self.u_q * gpr / scale
        else:  # ODE_COUPLED
            scale = alpha
            res[row] = (
                xdot[ir_p] / self.u_p + xdot[iq] / self.u_q - xdot[il_p] / self.u_p
                - alpha * phi
            ) / scale
            if with_jac:
                jd[row, ir_p] = 1.0 / self.u_p / scale
                jd[row, iq] = 1.0 / self.u_q / scale
                jd[row, il_p] = -1.0 / self.u_p / scale
                jx[row, iq] = -alpha * gq / scale
                jx[row, il_p] = -alpha * gpl / scale
                jx[row, ir_p] = -alpha * gpr / scale
        return row + 1


def assemble_residual(
    network: Network,
    state: SystemState,
    state_derivative: SystemState | None,
    t: float,
    discretization: Discretization,
    tvs_map: dict[str, TargetValueSet] | None = None,
    regulator_variant: reg.RegulatorModelVariant = reg.RegulatorModelVariant.LIMIT,
    alpha: float = 1.0e3,
) -> np.ndarray:
    """Residual vector for a SystemState (contract-level entry point).

    ``state_derivative`` holds time derivatives in the same layout; None
    means all derivatives are zero.
    """
    asm = Assembler(network, discretization)
    x = asm.layout.pack(state)
    if state_derivative is None:
        xdot = np.zeros_like(x)
    else:
        xdot = np.empty(asm.layout.n_vars)
        for nid, i in asm.layout.pressure_index.items():
            xdot[i] = state_derivative.node_pressures.get(nid, 0.0)
        for aid, (il, ir) in asm.layout.pipe_flow_index.items():
            dql, dqr = state_derivative.arc_flows.get(aid, (0.0, 0.0))
            xdot[il], xdot[ir] = dql, dqr
        for aid, i in asm.layout.regulator_flow_index.items():
            xdot[i] = state_derivative.arc_flows.get(aid, (0.0, 0.0))[0]
    if tvs_map is None:
        tvs_map = {aid: TargetValueSet() for aid in network.regulator_order}
    res, _, _ = asm.assemble(
        x, xdot, t, tvs_map, regulator_variant=regulator_variant, alpha=alpha
    )
    return res
