import math

import pytest

from gasreg.network import Arc, Network, Node, NodeKind, Profile
from gasreg.physics import GasConstants, GasFactorModel, PipeGeometry
from gasreg.regulator import (
    RegulatorSpec,
    TargetValueSchedule,
    TargetValueType as TV,
)

H = 3600.0

BENCH_GEOM = PipeGeometry(10_000.0, 0.9, 0.012e-3)


def open_schedule():
    return TargetValueSchedule({TV.Q_MAX: [(0.0, math.inf)]})


def make_benchmark_network(throughput: float = 10.0,
                           pressure_driven: bool = False,
                           entry_pressure: float = 50e5) -> Network:
    """Two 10 km pipes around one regulator, flow-driven by default."""
    if pressure_driven:
        entry = Node("n_in", NodeKind.ENTRY,
                     pressure_profile=Profile.constant(entry_pressure))
        exit_ = Node("n_out", NodeKind.EXIT,
                     pressure_profile=Profile.constant(entry_pressure))
    else:
        entry = Node("n_in", NodeKind.ENTRY,
                     flow_profile=Profile.constant(throughput))
        exit_ = Node("n_out", NodeKind.EXIT,
                     flow_profile=Profile.constant(-throughput))
    nodes = [entry, Node("n_l"), Node("n_r"), exit_]
    arcs = [
        Arc("pipe_in", "n_in", "n_l", BENCH_GEOM),
        Arc("rg", "n_l", "n_r", RegulatorSpec("rg", open_schedule())),
        Arc("pipe_out", "n_r", "n_out", BENCH_GEOM),
    ]
    return Network(nodes, arcs, GasConstants(), GasFactorModel.linear_aga(283.15))


def benchmark_schedule() -> TargetValueSchedule:
    return TargetValueSchedule({
        TV.P_IN_MIN: [(0.0, 48e5), (5.0 * H, 55e5), (5.5 * H, 53e5)],
        TV.P_OUT_MAX: [(0.0, 55e5), (3.5 * H, 47e5), (4.5 * H, 55e5)],
        TV.P_IN_MAX: [(0.0, 100e5)],
        TV.P_OUT_MIN: [(0.0, 40e5), (6.5 * H, 46e5), (7.0 * H, 46.5e5),
                       (7.5 * H, 47.5e5)],
        TV.Q_MAX: [(0.0, 9.0), (1.0 * H, 15.0), (2.0 * H, 6.0),
                   (2.5 * H, 10.0), (6.5 * H, 6.0)],
    })


@pytest.fixture
def benchmark_network():
    return make_benchmark_network()


@pytest.fixture(scope="session")
def scenario1_trajectory():
    """Full 12 h scenario-1 run, shared across tests (read-only)."""
    from gasreg import sim

    net = make_benchmark_network()
    cfg = sim.SimulationConfig(horizon=12 * H)
    st0 = sim.solve_steady_state(net, anchor=("n_in", 50e5), config=cfg)
    return net, sim.simulate(net, {"rg": benchmark_schedule()}, cfg,
                             initial_state=st0)
