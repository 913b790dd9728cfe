"""Independent feasibility check of candidate solutions.

The check works on the original model, indicators included, so it does
not inherit any weakness of the big-M reformulation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import MilpModel, ModelError, Sense


@dataclass(frozen=True)
class Violation:
    name: str
    kind: str  # bound / integrality / constraint / indicator
    amount: float


@dataclass(frozen=True)
class VerificationReport:
    feasible: bool
    objective: float
    violations: tuple[Violation, ...]

    def worst(self) -> Violation | None:
        return max(self.violations, key=lambda v: v.amount, default=None)


def verify_solution(model: MilpModel, assignment: dict[str, float],
                    feas_tol: float = 1e-7,
                    int_tol: float = 1e-6) -> VerificationReport:
    missing = set(model.variables) - set(assignment)
    if missing:
        raise ModelError(f"assignment misses variables: {sorted(missing)[:5]}")

    violations = []
    for var in model.variables.values():
        x = assignment[var.name]
        over = max(var.lb - x, x - var.ub)
        if over > feas_tol:
            violations.append(Violation(var.name, "bound", over))
        if var.is_binary:
            frac = abs(x - round(x))
            if frac > int_tol:
                violations.append(Violation(var.name, "integrality", frac))

    for con in model.constraints:
        amount = model.evaluate_constraint(con, assignment)
        if amount > feas_tol:
            violations.append(Violation(con.name, "constraint", amount))

    for ind in model.indicators:
        if not model.indicator_active(ind, assignment, int_tol):
            continue
        amount = model.evaluate_constraint(ind.constraint, assignment)
        if amount > feas_tol:
            violations.append(Violation(ind.name, "indicator", amount))

    objective = sum(coef * assignment[var] for var, coef in model.objective)
    return VerificationReport(not violations, objective, tuple(violations))
