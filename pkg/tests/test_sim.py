import math

import numpy as np
import pytest

from gasreg import sim
from gasreg.network import (
    Arc,
    Discretization,
    Network,
    NetworkError,
    Node,
    NodeKind,
    Profile,
)
from gasreg.physics import (
    GasConstants,
    GasFactorModel,
    PipeGeometry,
    friction_factor_nikuradse,
)
from gasreg.regulator import TargetValueSet

from conftest import H, make_benchmark_network, benchmark_schedule

AGA = GasFactorModel.linear_aga(283.15)


def _pipe_only_network(p_left, p_right):
    nodes = [
        Node("a", NodeKind.ENTRY, pressure_profile=Profile.constant(p_left)),
        Node("b", NodeKind.EXIT, pressure_profile=Profile.constant(p_right)),
    ]
    arcs = [Arc("p1", "a", "b", PipeGeometry(10_000.0, 0.9, 0.012e-3))]
    return Network(nodes, arcs, GasConstants(), AGA)


class TestSemismoothNewton:
    def test_smooth_quadratic(self):
        # f(x) = (x1^2 - 2, x2^2 - 3); quadratic convergence from a 10%
        # perturbation means very few iterations
        def fn(x):
            res = np.array([x[0] ** 2 - 2.0, x[1] ** 2 - 3.0])
            jac = np.diag([2 * x[0], 2 * x[1]])
            return res, jac

        x0 = np.array([math.sqrt(2) * 1.1, math.sqrt(3) * 1.1])
        x, iters, _ = sim.semismooth_newton(fn, x0, 1e-12, 50)
        assert iters <= 8
        assert x == pytest.approx([math.sqrt(2), math.sqrt(3)], rel=1e-10)

    def test_piecewise_linear_root(self):
        c = 3.0

        def fn(x):
            v1, v2 = -x[0], c - x[0]
            value = max(v1, v2)
            return np.array([value]), np.array([[-1.0]])

        x, _, _ = sim.semismooth_newton(fn, np.array([0.0]), 1e-12, 50)
        assert x[0] == pytest.approx(c)

    def test_nonconvergence_reports_history(self):
        def fn(x):
            return np.array([x[0] ** 2 + 1.0]), np.array([[2 * x[0] + 1e-9]])

        with pytest.raises(sim.NewtonError) as exc:
            sim.semismooth_newton(fn, np.array([1.0]), 1e-12, 10)
        assert len(exc.value.residual_history) >= 1

    def test_singular_jacobian_names_equation(self):
        def fn(x):
            return np.array([1.0, 0.0]), np.zeros((2, 2))

        with pytest.raises(sim.SingularJacobianError) as exc:
            sim.semismooth_newton(fn, np.zeros(2), 1e-12, 10, ["eq_a", "eq_b"])
        assert exc.value.equation_index == 0


class TestSteadyState:
    def test_benchmark_outlet_pressure(self, benchmark_network):
        state = sim.solve_steady_state(benchmark_network, anchor=("n_in", 50e5))
        assert state.node_pressures["n_out"] / 1e5 == pytest.approx(49.992, abs=0.005)
        assert state.arc_flows["rg"][0] == pytest.approx(10.0, abs=1e-8)
        # open regulator: zero pressure difference
        assert state.node_pressures["n_l"] == pytest.approx(
            state.node_pressures["n_r"], abs=1.0
        )

    def test_zero_throughput_rest_state(self):
        net = make_benchmark_network(throughput=0.0)
        state = sim.solve_steady_state(net, anchor=("n_in", 50e5))
        for p in state.node_pressures.values():
            assert p == pytest.approx(50e5, abs=10.0)
        for ql, qr in state.arc_flows.values():
            assert abs(ql) < 1e-8 and abs(qr) < 1e-8

    def test_single_pipe_flow_vs_bisection(self):
        # oracle: bisect the scalar momentum equation for q
        pl, pr = 50e5, 49e5
        net = _pipe_only_network(pl, pr)
        state = sim.solve_steady_state(net)
        geom = net.arcs["p1"].payload
        con, kappa = net.gas, net.gas.kappa(geom.area)
        lam = friction_factor_nikuradse(geom)
        z, _ = AGA.evaluate(pl)

        def momentum(q):
            return (geom.area * (pr - pl) / geom.length
                    + lam / (2 * geom.diameter) * kappa * z * q * abs(q) / pl)

        lo, hi = 0.0, 1e3
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if momentum(mid) < 0:
                lo = mid
            else:
                hi = mid
        assert state.arc_flows["p1"][0] == pytest.approx(lo, rel=1e-8)

    def test_unbalanced_flow_boundary_rejected(self):
        net = make_benchmark_network()
        object.__setattr__(net.nodes["n_out"], "flow_profile", Profile.constant(-9.0))
        with pytest.raises(NetworkError, match="zero net inflow"):
            sim.solve_steady_state(net, anchor=("n_in", 50e5))

    def test_missing_anchor_rejected(self, benchmark_network):
        with pytest.raises(NetworkError, match="anchor"):
            sim.solve_steady_state(benchmark_network)


class TestStep:
    def test_fixed_point(self, benchmark_network):
        cfg = sim.SimulationConfig()
        state = sim.solve_steady_state(benchmark_network, anchor=("n_in", 50e5))
        schedules = {}
        new, iters, halvings = sim.step(benchmark_network, state, 0.0, cfg, schedules)
        assert halvings == 0
        for nid in benchmark_network.node_order:
            assert new.node_pressures[nid] == pytest.approx(
                state.node_pressures[nid], abs=1.0
            )

    def test_fixed_point_preserved_over_100_steps(self, benchmark_network):
        cfg = sim.SimulationConfig(dt=180.0, horizon=100 * 180.0)
        state = sim.solve_steady_state(benchmark_network, anchor=("n_in", 50e5))
        traj = sim.simulate(benchmark_network, {}, cfg, initial_state=state)
        last = traj.states[-1]
        for nid in benchmark_network.node_order:
            drift = abs(last.node_pressures[nid] - state.node_pressures[nid])
            assert drift < 1e-6 * 1e5
        for aid in benchmark_network.arcs:
            drift = abs(last.arc_flows[aid][0] - state.arc_flows[aid][0])
            assert drift < 1e-6


class TestScenario1:
    def test_flow_settles_at_target_before_one_hour(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        idx = traj.times.index(0.9 * H)
        assert traj.states[idx].arc_flows["rg"][0] == pytest.approx(9.0, abs=0.1)

    def test_regulator_reopens_after_flow_target_raised(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        idx = traj.times.index(1.5 * H)
        s = traj.states[idx]
        assert abs(s.node_pressures["n_l"] - s.node_pressures["n_r"]) < 0.05e5

    def test_outlet_pressure_plateau(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        for t in np.arange(3.8 * H, 4.5 * H, 180.0):
            s = traj.states[traj.times.index(t)]
            assert s.node_pressures["n_r"] / 1e5 == pytest.approx(47.0, abs=0.1)

    def test_inlet_pressure_plateau(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        for t in np.arange(5.5 * H, 6.5 * H, 180.0):
            s = traj.states[traj.times.index(t)]
            assert s.node_pressures["n_l"] / 1e5 == pytest.approx(55.0, abs=0.1)

    def test_outlet_pressure_46_plateau(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        for t in np.arange(6.8 * H, 7.0 * H, 180.0):
            s = traj.states[traj.times.index(t)]
            assert s.node_pressures["n_r"] / 1e5 == pytest.approx(46.0, abs=0.1)

    def test_final_inlet_pressure(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        s = traj.states[-1]
        assert s.node_pressures["n_l"] / 1e5 == pytest.approx(53.0, abs=0.1)

    def test_check_valve_never_backflows(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        for s in traj.states:
            assert s.arc_flows["rg"][0] >= -1e-9
            # the ODE model enforces non-compression only dynamically, so a
            # few Pa of transient undershoot around reopening is expected
            assert (s.node_pressures["n_l"] - s.node_pressures["n_r"]) >= -10.0

    def test_mass_conservation(self, scenario1_trajectory):
        # balanced boundary flows: stored mass change stays near zero
        net, traj = scenario1_trajectory
        lp0 = sim.linepack(net, traj.states[0])
        lpT = sim.linepack(net, traj.states[-1])
        inflow_integral = 0.0
        for k in range(len(traj.times) - 1):
            dt = traj.times[k + 1] - traj.times[k]
            f0 = sim.boundary_inflow(net, traj.states[k])
            f1 = sim.boundary_inflow(net, traj.states[k + 1])
            inflow_integral += 0.5 * (f0 + f1) * dt
        throughput = 10.0 * (traj.times[-1] - traj.times[0])
        assert abs(lpT - lp0 - inflow_integral) <= 0.005 * throughput

    def test_discretizations_agree(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        cfg = sim.SimulationConfig(horizon=12 * H,
                                   discretization=Discretization.TRAPEZOIDAL)
        st0 = sim.solve_steady_state(net, anchor=("n_in", 50e5), config=cfg)
        other = sim.simulate(net, {"rg": benchmark_schedule()}, cfg,
                             initial_state=st0)
        for nid in ("n_l", "n_r"):
            a = np.array([s.node_pressures[nid] for s in traj.states])
            b = np.array([s.node_pressures[nid] for s in other.states])
            num = np.trapezoid(a - b, traj.times)
            den = np.trapezoid(b, traj.times)
            assert abs(num / den) < 0.002

    def test_dt_refinement_is_first_order(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        sched = {"rg": benchmark_schedule()}

        def run(dt):
            cfg = sim.SimulationConfig(dt=dt, horizon=12 * H)
            st0 = sim.solve_steady_state(net, anchor=("n_in", 50e5), config=cfg)
            out = sim.simulate(net, sched, cfg, initial_state=st0)
            stride = round(360.0 / dt)
            return np.array([s.node_pressures["n_l"]
                             for s in out.states[::stride]])

        coarse, mid, fine = run(360.0), run(180.0), run(90.0)
        err_coarse = np.max(np.abs(coarse - mid))
        err_fine = np.max(np.abs(mid - fine))
        assert err_fine < err_coarse

    def test_diagnostics_recorded(self, scenario1_trajectory):
        net, traj = scenario1_trajectory
        assert len(traj.diagnostics) == len(traj.states)
        d = traj.diagnostics[10]
        assert "rg" in d.pushing
        assert d.newton_iterations >= 1


class TestConfig:
    def test_dt_must_divide_horizon(self):
        with pytest.raises(ValueError, match="divide"):
            sim.SimulationConfig(dt=180.0, horizon=1000.0)

    def test_positive_tolerances(self):
        with pytest.raises(ValueError):
            sim.SimulationConfig(newton_tol=0.0)
