"""Target-value semantics and the nested max-min regulator models.

Pressures and flows are nondimensionalized by configurable scales before
they enter the max/min nesting, so the comparisons are between
dimensionless magnitudes.  The responsiveness ``alpha`` then carries 1/s.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

# Default comparison scales: 1 bar and 1 kg/s.
PRESSURE_SCALE = 1.0e5
FLOW_SCALE = 1.0


class BandRegulatorError(ValueError):
    """Finite minimal-flow target below the maximal one (flow band regulator).

    Band regulators hold their opening degree inside the flow band; they are
    excluded from this toolkit's scope.
    """


class Direction(enum.Enum):
    CLOSING = "closing"
    OPENING = "opening"


class TargetValueType(enum.Enum):
    P_IN_MIN = "p_in_min"
    P_OUT_MAX = "p_out_max"
    P_IN_MAX = "p_in_max"
    P_OUT_MIN = "p_out_min"
    Q_MAX = "q_max"
    Q_MIN = "q_min"

    @property
    def priority(self) -> int:
        return _PRIORITY[self]

    @property
    def direction(self) -> Direction:
        return _DIRECTION[self]

    @property
    def is_max(self) -> bool:
        """True for upper-bound targets (violated when the quantity exceeds)."""
        return self in (
            TargetValueType.P_OUT_MAX,
            TargetValueType.P_IN_MAX,
            TargetValueType.Q_MAX,
        )


_PRIORITY = {
    TargetValueType.P_IN_MIN: 4,
    TargetValueType.P_OUT_MAX: 4,
    TargetValueType.P_IN_MAX: 3,
    TargetValueType.P_OUT_MIN: 3,
    TargetValueType.Q_MAX: 2,
    TargetValueType.Q_MIN: 1,
}

_DIRECTION = {
    TargetValueType.P_IN_MIN: Direction.CLOSING,
    TargetValueType.P_OUT_MAX: Direction.CLOSING,
    TargetValueType.P_IN_MAX: Direction.OPENING,
    TargetValueType.P_OUT_MIN: Direction.OPENING,
    TargetValueType.Q_MAX: Direction.CLOSING,
    TargetValueType.Q_MIN: Direction.OPENING,
}

PRESSURE_TYPES = (
    TargetValueType.P_IN_MIN,
    TargetValueType.P_OUT_MAX,
    TargetValueType.P_IN_MAX,
    TargetValueType.P_OUT_MIN,
)
FLOW_TYPES = (TargetValueType.Q_MAX, TargetValueType.Q_MIN)


def default_value(tv_type: TargetValueType) -> float:
    """Neutral value for a target that is not in use.

    Maxima default to +inf and minima to 0, except the minimal flow which is
    pinned to +inf for non-band regulators (it then shares the maximal-flow
    value as the common flow set-point).
    """
    if tv_type is TargetValueType.Q_MIN:
        return math.inf
    return math.inf if tv_type.is_max else 0.0


@dataclass(frozen=True)
class TargetValueSet:
    """The six set-points of one regulator at one instant."""

    p_in_min: float = 0.0
    p_in_max: float = math.inf
    p_out_min: float = 0.0
    p_out_max: float = math.inf
    q_max: float = math.inf
    q_min: float = math.inf

    def __post_init__(self):
        if self.q_min != math.inf and self.q_min < self.q_max:
            raise BandRegulatorError(
                f"finite minimal flow target {self.q_min} below maximal flow "
                f"target {self.q_max}: flow band regulators are out of scope"
            )
        for name in ("p_in_min", "p_in_max", "p_out_min", "p_out_max", "q_max"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"target value {name} must be >= 0")

    @property
    def q_set(self) -> float:
        """Common flow set-point (minimal flow pinned to the maximal one)."""
        return self.q_max

    def value(self, tv_type: TargetValueType) -> float:
        return getattr(self, tv_type.value)


@dataclass
class TargetValueSchedule:
    """Piecewise-constant, right-continuous target-value evolution.

    ``events`` maps each target type to a list of (time s, value) pairs with
    strictly increasing times.  The maximal-flow target must have an event at
    the schedule start.
    """

    events: dict[TargetValueType, list[tuple[float, float]]]

    def __post_init__(self):
        for tv_type, evs in self.events.items():
            times = [t for t, _ in evs]
            if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
                raise ValueError(f"event times for {tv_type.value} not increasing")
        if TargetValueType.Q_MAX not in self.events or not self.events[TargetValueType.Q_MAX]:
            raise ValueError("the maximal flow target value must always exist")

    @property
    def start_time(self) -> float:
        return self.events[TargetValueType.Q_MAX][0][0]

    def change_times(self) -> list[float]:
        """All event times after the initial one, sorted and unique."""
        t0 = self.start_time
        times = {t for evs in self.events.values() for t, _ in evs if t > t0}
        return sorted(times)


def schedule_at(schedule: TargetValueSchedule, t: float) -> TargetValueSet:
    """Most recent value per type at or before t; defaults for unset types."""
    values = {}
    for tv_type in TargetValueType:
        evs = schedule.events.get(tv_type, [])
        current = None
        for time, value in evs:
            if time <= t:
                current = value
            else:
                break
        if current is None:
            if tv_type is TargetValueType.Q_MAX:
                raise ValueError(
                    f"t = {t} precedes the initial maximal-flow event at "
                    f"{evs[0][0] if evs else 'none'}"
                )
            current = default_value(tv_type)
        values[tv_type.value] = current
    return TargetValueSet(**values)


def shift_schedule_half_step(
    schedule: TargetValueSchedule, dt_opt: float
) -> TargetValueSchedule:
    """Move every event after the start earlier by half an optimizer step.

    The shift is rounded to whole minutes with .5 rounding up (7.5 min
    becomes 8 min).  Initial events are initial conditions and stay put.
    """
    if dt_opt <= 0.0:
        raise ValueError("dt_opt must be positive")
    shift = math.floor(dt_opt / 120.0 + 0.5) * 60.0
    t0 = schedule.start_time
    shifted: dict[TargetValueType, list[tuple[float, float]]] = {}
    for tv_type, evs in schedule.events.items():
        new_evs = []
        for time, value in evs:
            new_time = time if time <= t0 else time - shift
            if new_time < t0 or (new_evs and new_time <= new_evs[-1][0]):
                raise ValueError(
                    f"shifting event of {tv_type.value} at t = {time} by "
                    f"{shift} s would reorder the schedule"
                )
            new_evs.append((new_time, value))
        shifted[tv_type] = new_evs
    return TargetValueSchedule(shifted)


class RegulatorModelVariant(enum.Enum):
    ODE = "ode"
    ODE_COUPLED = "ode_coupled"
    LIMIT = "limit"


@dataclass(frozen=True)
class RegulatorSpec:
    id: str
    schedule: TargetValueSchedule
    alpha: float = 1.0e3
    model_variant: RegulatorModelVariant = RegulatorModelVariant.ODE

    def __post_init__(self):
        if self.model_variant is not RegulatorModelVariant.LIMIT and self.alpha <= 0.0:
            raise ValueError("alpha must be positive for the ODE variants")


# --- nested max-min expression -------------------------------------------
#
# Terms carry (value, d/dq, d/dp_left, d/dp_right) in the scaled variables.
# max/min pick the active branch, ties broken toward the first argument, so
# the gradient is the one-sided derivative used by the semismooth Newton.

_Term = tuple[float, float, float, float]

# Count of exact ties between max/min branches, for solver diagnostics.
_tie_count = 0


def reset_tie_count():
    global _tie_count
    _tie_count = 0


def tie_count() -> int:
    return _tie_count


def _maximum(*terms: _Term) -> _Term:
    global _tie_count
    best = terms[0]
    for term in terms[1:]:
        if term[0] == best[0]:
            _tie_count += 1
        elif term[0] > best[0]:
            best = term
    return best


def _minimum(*terms: _Term) -> _Term:
    global _tie_count
    best = terms[0]
    for term in terms[1:]:
        if term[0] == best[0]:
            _tie_count += 1
        elif term[0] < best[0]:
            best = term
    return best


def _const(value: float) -> _Term:
    return (value, 0.0, 0.0, 0.0)


def regulator_nesting(
    q: float,
    p_left: float,
    p_right: float,
    tvs: TargetValueSet,
    u_p: float = PRESSURE_SCALE,
    u_q: float = FLOW_SCALE,
) -> tuple[float, tuple[float, float, float]]:
    """Evaluate the nested max-min control expression and its gradient.

    Returns the dimensionless value and the one-sided gradient with respect
    to (q, p_left, p_right) in SI units.
    """
    qs = (q / u_q, 1.0 / u_q, 0.0, 0.0)
    pl = (p_left / u_p, 0.0, 1.0 / u_p, 0.0)
    pr = (p_right / u_p, 0.0, 0.0, 1.0 / u_p)

    def scaled_p(value: float) -> _Term:
        return _const(value / u_p if math.isfinite(value) else value)

    def sub(a: _Term, b: _Term) -> _Term:
        return (a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3])

    q_set = tvs.q_set
    flow_term = (
        _const(math.inf)
        if not math.isfinite(q_set)
        else sub(_const(q_set / u_q), qs)
    )
    inner_max = _maximum(
        flow_term,
        sub(pl, scaled_p(tvs.p_in_max)),
        sub(scaled_p(tvs.p_out_min), pr),
    )
    value = _maximum(
        (-qs[0], -qs[1], 0.0, 0.0),
        _minimum(
            sub(pl, _maximum(scaled_p(tvs.p_in_min), pr)),
            sub(_minimum(scaled_p(tvs.p_out_max), pl), pr),
            inner_max,
        ),
    )
    return value[0], (value[1], value[2], value[3])


def regulator_rhs(
    q: float,
    p_left: float,
    p_right: float,
    tvs: TargetValueSet,
    alpha: float,
    u_p: float = PRESSURE_SCALE,
    u_q: float = FLOW_SCALE,
) -> float:
    """dq/dt (kg/s^2) of the full regulator ODE."""
    value, _ = regulator_nesting(q, p_left, p_right, tvs, u_p, u_q)
    return alpha * u_q * value


def regulator_residual_limit(
    q: float,
    p_left: float,
    p_right: float,
    tvs: TargetValueSet,
    u_p: float = PRESSURE_SCALE,
    u_q: float = FLOW_SCALE,
) -> float:
    """Algebraic regulator equation: the nesting equated to zero.

    This is the instantaneous-adjustment idealization of the ODE model and
    doubles as the oracle for the optimization model's regulator behavior.
    """
    value, _ = regulator_nesting(q, p_left, p_right, tvs, u_p, u_q)
    return value


@dataclass(frozen=True)
class PushingResult:
    check_valve_closed: bool
    pushing: TargetValueType | None
    stable: TargetValueType | None


def _violated(tv_type: TargetValueType, q, p_left, p_right, tvs) -> bool:
    tau = tvs.value(tv_type)
    if tv_type is TargetValueType.P_IN_MIN:
        return p_left < tau
    if tv_type is TargetValueType.P_OUT_MAX:
        return p_right > tau
    if tv_type is TargetValueType.P_IN_MAX:
        return p_left > tau
    if tv_type is TargetValueType.P_OUT_MIN:
        return p_right < tau
    if tv_type is TargetValueType.Q_MAX:
        return q > tau
    # Minimal flow: the stored bound is +inf for non-band regulators, so its
    # implied bound q_min <= q is violated at every state.
    return True


def _operation_value(tv_type: TargetValueType, q, p_left, p_right) -> float:
    if tv_type in (TargetValueType.P_IN_MIN, TargetValueType.P_IN_MAX):
        return p_left
    if tv_type in (TargetValueType.P_OUT_MIN, TargetValueType.P_OUT_MAX):
        return p_right
    return q


def pushing_target_value(
    q: float,
    p_left: float,
    p_right: float,
    tvs: TargetValueSet,
    eps_stable: float = 1e-3,
) -> PushingResult:
    """Highest-priority violated target and, if present, the stable target.

    The stable target is an equality-active target of higher priority and
    opposite direction than the pushing one, detected within a relative
    tolerance.  Check-valve closure preempts all target values.
    """
    if p_left < p_right:
        return PushingResult(True, None, None)

    pushing = None
    for tv_type in sorted(TargetValueType, key=lambda x: -x.priority):
        if _violated(tv_type, q, p_left, p_right, tvs):
            pushing = tv_type
            break
    if pushing is None:
        return PushingResult(False, None, None)

    stable = None
    for tv_type in sorted(TargetValueType, key=lambda x: -x.priority):
        if tv_type.priority <= pushing.priority:
            break
        if tv_type.direction is pushing.direction:
            continue
        tau = tvs.value(tv_type)
        if not math.isfinite(tau):
            continue
        oper = _operation_value(tv_type, q, p_left, p_right)
        scale = max(abs(tau), 1.0)
        if abs(oper - tau) <= eps_stable * scale:
            stable = tv_type
            break
    return PushingResult(False, pushing, stable)
