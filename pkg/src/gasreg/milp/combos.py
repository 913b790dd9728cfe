"""Catalog of admissible stable-pushing target value combinations.

A fully adjusted regulator is always characterized by one of fifteen
configurations: nine with a stable target pinning the operating point
(active mode), three pushing-only open configurations and three
pushing-only closed ones.  Each configuration implies, per target type, a
relation between the chosen set-point and the operating point.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from ..regulator import Direction, TargetValueSet, TargetValueType as TV


class Mode(enum.Enum):
    ACTIVE = "ac"
    OPEN = "op"
    CLOSED = "cl"
    CHECK_VALVE = "cv"


class CellStatus(enum.Enum):
    STABLE = "stable"
    VIOLATED = "violated"
    SATISFIED = "satisfied"
    IRRELEVANT = "irrelevant"


@dataclass(frozen=True)
class Combo:
    mode: Mode
    stable: TV | None
    pushing: TV

    def __post_init__(self):
        if self.stable is not None:
            if self.mode is not Mode.ACTIVE:
                raise ValueError("stable target requires active mode")
            if self.stable.priority <= self.pushing.priority:
                raise ValueError("stable target must outrank the pushing one")
            if self.stable.direction is self.pushing.direction:
                raise ValueError("stable and pushing directions must oppose")

    def cell(self, tv_type: TV) -> CellStatus:
        if tv_type is self.stable:
            return CellStatus.STABLE
        if tv_type is self.pushing:
            return CellStatus.VIOLATED
        if tv_type is not self.stable and tv_type.priority > self.pushing.priority:
            return CellStatus.SATISFIED
        return CellStatus.IRRELEVANT

    @property
    def key(self) -> str:
        stable = self.stable.value if self.stable else "none"
        return f"{stable}__{self.pushing.value}"


ACTIVE_COMBOS: tuple[Combo, ...] = (
    Combo(Mode.ACTIVE, TV.Q_MAX, TV.Q_MIN),
    Combo(Mode.ACTIVE, TV.P_IN_MIN, TV.P_IN_MAX),
    Combo(Mode.ACTIVE, TV.P_IN_MIN, TV.P_OUT_MIN),
    Combo(Mode.ACTIVE, TV.P_IN_MIN, TV.Q_MIN),
    Combo(Mode.ACTIVE, TV.P_IN_MAX, TV.Q_MAX),
    Combo(Mode.ACTIVE, TV.P_OUT_MAX, TV.P_IN_MAX),
    Combo(Mode.ACTIVE, TV.P_OUT_MAX, TV.P_OUT_MIN),
    Combo(Mode.ACTIVE, TV.P_OUT_MAX, TV.Q_MIN),
    Combo(Mode.ACTIVE, TV.P_OUT_MIN, TV.Q_MAX),
)
CLOSED_COMBOS: tuple[Combo, ...] = (
    Combo(Mode.CLOSED, None, TV.Q_MAX),
    Combo(Mode.CLOSED, None, TV.P_IN_MIN),
    Combo(Mode.CLOSED, None, TV.P_OUT_MAX),
)
OPEN_COMBOS: tuple[Combo, ...] = (
    Combo(Mode.OPEN, None, TV.Q_MIN),
    Combo(Mode.OPEN, None, TV.P_IN_MAX),
    Combo(Mode.OPEN, None, TV.P_OUT_MIN),
)


class ComboCatalog:
    """All combinations, restricted to the target types a regulator has."""

    def __init__(self, existing_types: tuple[TV, ...] = tuple(TV)):
        self.existing_types = tuple(existing_types)
        missing = set(TV) - set(existing_types)

        def keep(combo: Combo) -> bool:
            if combo.pushing in missing:
                return False
            if combo.stable is not None and combo.stable in missing:
                return False
            return True

        self.active_combos = tuple(c for c in ACTIVE_COMBOS if keep(c))
        self.open_combos = tuple(c for c in OPEN_COMBOS if keep(c))
        self.closed_combos = tuple(c for c in CLOSED_COMBOS if keep(c))

    @property
    def all_combos(self) -> tuple[Combo, ...]:
        return self.active_combos + self.open_combos + self.closed_combos

    def for_mode(self, mode: Mode) -> tuple[Combo, ...]:
        return {
            Mode.ACTIVE: self.active_combos,
            Mode.OPEN: self.open_combos,
            Mode.CLOSED: self.closed_combos,
            Mode.CHECK_VALVE: (),
        }[mode]


def derived_open_closed(combo: Combo) -> tuple[Combo, Combo]:
    """Open and closed pushing-only combos implied by an active one.

    The stable and pushing targets of an active combination have opposite
    directions; reinterpreting each as the pushing target of a mode-pure
    combination yields one open and one closed row of the catalog.
    """
    if combo.stable is None:
        raise ValueError("expected an active combination")
    opening = combo.stable if combo.stable.direction is Direction.OPENING else combo.pushing
    closing = combo.stable if combo.stable.direction is Direction.CLOSING else combo.pushing
    return Combo(Mode.OPEN, None, opening), Combo(Mode.CLOSED, None, closing)


def operation_value(tv_type: TV, p_left: float, p_right: float, q: float) -> float:
    if tv_type in (TV.P_IN_MIN, TV.P_IN_MAX):
        return p_left
    if tv_type in (TV.P_OUT_MIN, TV.P_OUT_MAX):
        return p_right
    return q


def check_combination(
    p_left: float,
    p_right: float,
    q: float,
    tvs: TargetValueSet,
    combo: Combo,
    epsilon: float = 0.0,
    tol: float = 0.0,
    include_mode: bool = True,
) -> bool:
    """Whether a state and set-point assignment realizes the combination.

    Stable cells demand equality within the relative band epsilon; violated
    and satisfied cells demand the directional inequality implied by the
    target type.  With ``include_mode`` the physical relations of the
    combination's mode are checked too; the pure cell semantics (mode
    agnostic) are what the stable-to-pushing reinterpretation argument is
    about.
    """
    if include_mode:
        if combo.mode in (Mode.OPEN, Mode.ACTIVE) and p_left < p_right - tol:
            return False
        if combo.mode is Mode.OPEN and abs(p_left - p_right) > tol:
            return False
        if combo.mode is Mode.CLOSED and abs(q) > tol:
            return False
        if q < -tol:
            return False

    for tv_type in TV:
        status = combo.cell(tv_type)
        if status is CellStatus.IRRELEVANT:
            continue
        tau = tvs.value(tv_type)
        oper = operation_value(tv_type, p_left, p_right, q)
        if status is CellStatus.STABLE:
            if not math.isfinite(tau):
                return False
            if abs(tau - oper) > epsilon * abs(oper) + tol:
                return False
        elif status is CellStatus.VIOLATED:
            # a violated minimum sits above its quantity, a violated
            # maximum below it
            if tv_type.is_max:
                if not (tau <= oper + tol):
                    return False
            else:
                if not (tau >= oper - tol):
                    return False
        else:  # satisfied
            if tv_type.is_max:
                if not (tau >= oper - tol):
                    return False
            else:
                if not (tau <= oper + tol):
                    return False
    return True
