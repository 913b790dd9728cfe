"""In-memory mixed-integer linear model with indicator constraints.

Variables and constraints are kept in insertion order, so identical build
sequences produce identical models and identical exports.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class ModelError(ValueError):
    pass


class Sense(enum.Enum):
    LE = "<="
    GE = ">="
    EQ = "="


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float
    ub: float
    is_binary: bool = False

    def __post_init__(self):
        if self.lb > self.ub:
            raise ModelError(f"variable {self.name}: lb {self.lb} > ub {self.ub}")
        if self.is_binary and (self.lb < 0.0 or self.ub > 1.0):
            raise ModelError(f"binary variable {self.name} with bounds outside [0, 1]")


@dataclass(frozen=True)
class LinearConstraint:
    name: str
    coeffs: tuple[tuple[str, float], ...]
    sense: Sense
    rhs: float


@dataclass(frozen=True)
class IndicatorConstraint:
    """Linear constraint enforced when the sum of some binaries hits a value.

    ``activation_vars`` are binaries whose sum is known to be at most one in
    every feasible solution; the constraint binds when the sum equals
    ``activation_sum`` (0 or 1).
    """

    name: str
    activation_vars: tuple[str, ...]
    activation_sum: int
    constraint: LinearConstraint

    def __post_init__(self):
        if self.activation_sum not in (0, 1):
            raise ModelError("activation sum must be 0 or 1")
        if self.activation_sum == 0 and len(self.activation_vars) != 1:
            raise ModelError("sum-equals-0 activation expects a single binary")


class MilpModel:
    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: dict[str, Variable] = {}
        self.constraints: list[LinearConstraint] = []
        self.indicators: list[IndicatorConstraint] = []
        self.objective: tuple[tuple[str, float], ...] = ()
        self.objective_sense = "min"
        self._constraint_names: set[str] = set()

    # -- construction -----------------------------------------------------

    def add_variable(self, name: str, lb: float, ub: float,
                     binary: bool = False) -> str:
        if name in self.variables:
            raise ModelError(f"duplicate variable {name}")
        self.variables[name] = Variable(name, lb, ub, binary)
        return name

    def _check_terms(self, coeffs):
        seen = set()
        for var, coef in coeffs:
            if var not in self.variables:
                raise ModelError(f"unknown variable {var}")
            if var in seen:
                raise ModelError(f"repeated variable {var} in one constraint")
            seen.add(var)
            if not math.isfinite(coef):
                raise ModelError(f"non-finite coefficient on {var}")

    def add_constraint(self, name: str, coeffs, sense: Sense, rhs: float):
        if name in self._constraint_names:
            raise ModelError(f"duplicate constraint {name}")
        coeffs = tuple(coeffs)
        self._check_terms(coeffs)
        if not math.isfinite(rhs):
            raise ModelError(f"non-finite right-hand side in {name}")
        con = LinearConstraint(name, coeffs, sense, rhs)
        self.constraints.append(con)
        self._constraint_names.add(name)
        return con

    def add_indicator(self, name: str, activation_vars, activation_sum: int,
                      coeffs, sense: Sense, rhs: float):
        if name in self._constraint_names:
            raise ModelError(f"duplicate constraint {name}")
        activation_vars = tuple(activation_vars)
        for var in activation_vars:
            if var not in self.variables or not self.variables[var].is_binary:
                raise ModelError(f"activation variable {var} is not a binary")
        coeffs = tuple(coeffs)
        self._check_terms(coeffs)
        ind = IndicatorConstraint(
            name, activation_vars, activation_sum,
            LinearConstraint(name, coeffs, sense, rhs),
        )
        self.indicators.append(ind)
        self._constraint_names.add(name)
        return ind

    def set_objective(self, coeffs, sense: str = "min"):
        if sense not in ("min", "max"):
            raise ModelError(f"unknown objective sense {sense}")
        coeffs = tuple(coeffs)
        self._check_terms(coeffs)
        self.objective = coeffs
        self.objective_sense = sense

    def fix_variable(self, name: str, value: float):
        """Pin a variable by collapsing its bounds."""
        var = self.variables.get(name)
        if var is None:
            raise ModelError(f"unknown variable {name}")
        if value < var.lb - 1e-9 or value > var.ub + 1e-9:
            raise ModelError(
                f"cannot fix {name} to {value}, outside [{var.lb}, {var.ub}]"
            )
        self.variables[name] = Variable(name, value, value, var.is_binary)

    # -- queries ----------------------------------------------------------

    @property
    def binary_names(self) -> list[str]:
        return [v.name for v in self.variables.values() if v.is_binary]

    def evaluate_constraint(self, con: LinearConstraint,
                            assignment: dict[str, float]) -> float:
        """Signed violation: positive means the constraint is broken."""
        lhs = sum(coef * assignment[var] for var, coef in con.coeffs)
        if con.sense is Sense.LE:
            return lhs - con.rhs
        if con.sense is Sense.GE:
            return con.rhs - lhs
        return abs(lhs - con.rhs)

    def indicator_active(self, ind: IndicatorConstraint,
                         assignment: dict[str, float],
                         int_tol: float = 1e-6) -> bool:
        total = sum(assignment[v] for v in ind.activation_vars)
        return abs(total - ind.activation_sum) <= int_tol
