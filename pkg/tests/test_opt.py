import math

import pytest

from gasreg import opt, sim
from gasreg.milp import build
from gasreg.milp.combos import ComboCatalog, Mode
from gasreg.network import (
    Arc,
    Network,
    NetworkError,
    Node,
    NodeKind,
    Profile,
    ProfileKind,
    SystemState,
)
from gasreg.physics import GasConstants, GasFactorModel
from gasreg.regulator import (
    RegulatorSpec,
    TargetValueSchedule,
    TargetValueSet,
    TargetValueType as TV,
)

from conftest import (
    BENCH_GEOM,
    H,
    make_benchmark_network,
    open_schedule,
    benchmark_schedule,
)


@pytest.fixture(scope="module")
def steady():
    net = make_benchmark_network()
    st0 = sim.solve_steady_state(net, anchor=("n_in", 50e5))
    return net, st0


class TestMarchLinearized:
    def test_steady_fixed_point(self, steady):
        net, st0 = steady
        cfg = build.TvOptConfig()
        times, states = opt.march_linearized(net, {"rg": open_schedule()},
                                             4 * H, cfg, st0)
        assert times[0] == 0.0 and times[-1] == 4 * H
        # the linearized model reproduces the nonlinear steady state up to
        # its linearization error of a few millibar
        for s in states:
            for nid, p in st0.node_pressures.items():
                assert s.node_pressures[nid] == pytest.approx(p, abs=0.01e5)

    def test_targets_hold_at_grid_times(self, steady):
        # the coarse model is instantly adjusted: the state at a grid time
        # satisfies the set-points of that same time
        net, st0 = steady
        cfg = build.TvOptConfig(dt_opt=180.0)
        times, states = opt.march_linearized(net, {"rg": benchmark_schedule()},
                                             2 * H, cfg, st0)
        k = times.index(180.0)
        assert states[k].arc_flows["rg"][0] == pytest.approx(9.0, abs=1e-6)
        # the raised flow target at 01:00 binds at that very grid time
        k = times.index(3600.0)
        assert states[k].arc_flows["rg"][0] == pytest.approx(15.0, abs=1e-6)

    def test_scenario1_plateaus(self, steady):
        net, st0 = steady
        cfg = build.TvOptConfig()
        times, states = opt.march_linearized(net, {"rg": benchmark_schedule()},
                                             12 * H, cfg, st0)
        s = states[times.index(4.0 * H)]
        assert s.node_pressures["n_r"] / 1e5 == pytest.approx(47.0, abs=0.1)
        s = states[times.index(6.0 * H)]
        assert s.node_pressures["n_l"] / 1e5 == pytest.approx(55.0, abs=0.1)
        assert states[-1].node_pressures["n_l"] / 1e5 == pytest.approx(53.0,
                                                                      abs=0.1)

    def test_dt_must_divide_horizon(self, steady):
        net, st0 = steady
        with pytest.raises(ValueError, match="divide"):
            opt.march_linearized(net, {"rg": open_schedule()}, 1000.0,
                                 build.TvOptConfig(), st0)


def _both_profiles_network(times, states):
    p_in = Profile(ProfileKind.PIECEWISE_LINEAR,
                   tuple((t, s.node_pressures["n_in"])
                         for t, s in zip(times, states)))
    p_out = Profile(ProfileKind.PIECEWISE_LINEAR,
                    tuple((t, s.node_pressures["n_out"])
                          for t, s in zip(times, states)))
    nodes = [
        Node("n_in", NodeKind.ENTRY, flow_profile=Profile.constant(10.0),
             pressure_profile=p_in),
        Node("n_l"), Node("n_r"),
        Node("n_out", NodeKind.EXIT, flow_profile=Profile.constant(-10.0),
             pressure_profile=p_out),
    ]
    arcs = [
        Arc("pipe_in", "n_in", "n_l", BENCH_GEOM),
        Arc("rg", "n_l", "n_r", RegulatorSpec("rg", open_schedule())),
        Arc("pipe_out", "n_r", "n_out", BENCH_GEOM),
    ]
    return Network(nodes, arcs, GasConstants(),
                   GasFactorModel.linear_aga(283.15))


class TestMarchPrescribed:
    def test_recovers_marched_interior_state(self, steady):
        net, st0 = steady
        cfg = build.TvOptConfig()
        times, ref = opt.march_linearized(net, {"rg": benchmark_schedule()},
                                          4 * H, cfg, st0)
        net2 = _both_profiles_network(times, ref)
        t2, got = opt.march_prescribed(net2, 4 * H, cfg, st0)
        assert t2 == times
        for a, b in zip(got, ref):
            for nid in ("n_l", "n_r"):
                assert a.node_pressures[nid] == pytest.approx(
                    b.node_pressures[nid], abs=1e-5
                )

    def test_underdetermined_without_pressure_profiles(self, steady):
        net, st0 = steady
        with pytest.raises(NetworkError, match="underdetermined"):
            opt.march_prescribed(net, 900.0, build.TvOptConfig(), st0)

    def test_inconsistent_profiles_rejected(self, steady):
        net, st0 = steady
        nodes = [
            Node("n_in", NodeKind.ENTRY, flow_profile=Profile.constant(10.0),
                 pressure_profile=Profile.constant(50e5)),
            Node("n_l"), Node("n_r"),
            Node("n_out", NodeKind.EXIT, flow_profile=Profile.constant(-10.0),
                 pressure_profile=Profile.constant(50e5)),
        ]
        arcs = [
            Arc("pipe_in", "n_in", "n_l", BENCH_GEOM),
            Arc("rg", "n_l", "n_r", RegulatorSpec("rg", open_schedule())),
            Arc("pipe_out", "n_r", "n_out", BENCH_GEOM),
        ]
        bad = Network(nodes, arcs, GasConstants(),
                      GasFactorModel.linear_aga(283.15))
        with pytest.raises(NetworkError, match="inconsistent"):
            opt.march_prescribed(bad, 4 * H, build.TvOptConfig(), st0)


class TestSelectCombo:
    def test_closed_on_violated_outlet_maximum(self):
        catalog = ComboCatalog()
        tvs = TargetValueSet(q_max=5.0, p_out_max=48e5)
        combo = opt.select_combo(0.0, 50e5, 49e5, tvs, catalog)
        assert combo.mode is Mode.CLOSED
        assert combo.pushing is TV.P_OUT_MAX

    def test_stable_flow_bound(self):
        catalog = ComboCatalog()
        tvs = TargetValueSet(q_max=9.0)
        combo = opt.select_combo(9.0, 50e5, 49e5, tvs, catalog)
        assert combo.mode is Mode.ACTIVE
        assert combo.stable is TV.Q_MAX

    def test_combo_for_targets_none_when_inadmissible(self):
        catalog = ComboCatalog()
        cfg = build.TvOptConfig()
        tau = {TV.P_IN_MIN: 60.0, TV.P_IN_MAX: 40.0, TV.P_OUT_MIN: 60.0,
               TV.P_OUT_MAX: 40.0, TV.Q_MAX: 0.0, TV.Q_MIN: 50.0}
        # contradictory set points admit no combination at a flowing point
        assert opt.combo_for_targets(10.0, 50.0, 49.0, tau, cfg, 0.0,
                                     catalog) is None

    def test_combo_for_targets_finds_stable_row(self):
        catalog = ComboCatalog()
        cfg = build.TvOptConfig()
        tau = {TV.P_IN_MIN: 1.0, TV.P_IN_MAX: 100.0, TV.P_OUT_MIN: 1.0,
               TV.P_OUT_MAX: 100.0, TV.Q_MAX: 9.0, TV.Q_MIN: 50.0}
        combo = opt.combo_for_targets(9.0, 50.0, 49.0, tau, cfg, 0.0, catalog)
        assert combo is not None
        assert combo.stable is TV.Q_MAX


def _flat_states(flows):
    """Open-regulator states with equal pressures and the given flows."""
    out = []
    for q in flows:
        out.append(SystemState(
            node_pressures={n: 50e5 for n in ("n_in", "n_l", "n_r", "n_out")},
            arc_flows={"pipe_in": (q, q), "rg": (q, q), "pipe_out": (q, q)},
        ))
    return out


class TestMinimizeChanges:
    def test_no_change_needed(self, steady):
        net, _ = steady
        cfg = build.TvOptConfig()
        states = _flat_states([9.0, 9.0, 9.0, 9.0])
        times = [900.0 * k for k in range(4)]
        res = opt.minimize_changes(net, times, states,
                                   {"rg": TargetValueSet(q_max=10.0)}, cfg)
        assert res.objective == 0
        assert res.changes == []

    def test_single_flow_target_change(self, steady):
        net, _ = steady
        cfg = build.TvOptConfig()
        states = _flat_states([9.0, 9.0, 12.0, 12.0])
        times = [900.0 * k for k in range(4)]
        res = opt.minimize_changes(net, times, states,
                                   {"rg": TargetValueSet(q_max=10.0)}, cfg)
        assert res.objective == 1
        (change,) = res.changes
        assert change.tv_type is TV.Q_MAX
        assert change.step == 2
        assert change.time == 1800.0
        assert change.value >= 11.9

    def test_changes_pushed_late(self, steady):
        # with a tie in the change count the change lands as late as the
        # trajectory admits
        net, _ = steady
        cfg = build.TvOptConfig()
        states = _flat_states([9.0, 9.0, 9.0, 12.0])
        times = [900.0 * k for k in range(4)]
        res = opt.minimize_changes(net, times, states,
                                   {"rg": TargetValueSet(q_max=10.0)}, cfg)
        assert res.objective == 1
        assert res.changes[0].step == 3

    def test_schedules_reflect_changes(self, steady):
        net, _ = steady
        cfg = build.TvOptConfig()
        states = _flat_states([9.0, 9.0, 12.0, 12.0])
        times = [900.0 * k for k in range(4)]
        res = opt.minimize_changes(net, times, states,
                                   {"rg": TargetValueSet(q_max=10.0)}, cfg)
        sched = res.schedules["rg"]
        events = dict(sched.events[TV.Q_MAX])
        assert 0.0 in events and 1800.0 in events
