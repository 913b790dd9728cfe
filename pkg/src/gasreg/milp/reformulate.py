"""Big-M reformulation of indicator constraints.

Every indicator becomes one or two ordinary linear rows whose activation
binaries enter with a coefficient chosen from the finite variable bounds.
A constant that comes out nonpositive means the row already holds for any
point in the box, so no row is emitted at all.
"""

from __future__ import annotations

import math

from .model import IndicatorConstraint, LinearConstraint, MilpModel, ModelError, Sense


def constraint_sup(model: MilpModel, coeffs, rhs: float) -> float:
    """sup of a.x - rhs over the variable box; infinite bounds are an error."""
    total = -rhs
    for var, coef in coeffs:
        v = model.variables[var]
        bound = v.ub if coef > 0 else v.lb
        if not math.isfinite(bound):
            raise ModelError(
                f"cannot derive a finite activation constant: variable {var} "
                "is unbounded in the constraint direction"
            )
        total += coef * bound
    return total


def _merge(coeffs, extra):
    out = dict(coeffs)
    for var, coef in extra:
        out[var] = out.get(var, 0.0) + coef
    return tuple((v, c) for v, c in out.items() if c != 0.0)


def _emit(model: MilpModel, out: MilpModel, name: str, ind: IndicatorConstraint,
          coeffs, rhs: float):
    """One <=-row of the indicator, guarded by its activation binaries."""
    big_m = constraint_sup(model, coeffs, rhs)
    if big_m <= 0.0:
        return
    if ind.activation_sum == 1:
        # a.x + M sum(v) <= rhs + M: binding at sum(v) = 1, slack below
        # (the activation binaries sum to at most one by construction)
        guarded = _merge(coeffs, [(v, big_m) for v in ind.activation_vars])
        out.add_constraint(name, guarded, Sense.LE, rhs + big_m)
    else:
        # a.x - M d <= rhs: binding at d = 0
        guarded = _merge(coeffs, [(ind.activation_vars[0], -big_m)])
        out.add_constraint(name, guarded, Sense.LE, rhs)


def reformulate_big_m(model: MilpModel) -> MilpModel:
    """Indicator-free copy of the model; equalities split into two rows."""
    out = MilpModel(model.name)
    out.variables = dict(model.variables)
    for con in model.constraints:
        out.add_constraint(con.name, con.coeffs, con.sense, con.rhs)
    for ind in model.indicators:
        con = ind.constraint
        if con.sense in (Sense.LE, Sense.EQ):
            name = con.name if con.sense is Sense.LE else con.name + "_hi"
            _emit(model, out, name, ind, con.coeffs, con.rhs)
        if con.sense in (Sense.GE, Sense.EQ):
            name = con.name if con.sense is Sense.GE else con.name + "_lo"
            flipped = tuple((v, -c) for v, c in con.coeffs)
            _emit(model, out, name, ind, flipped, -con.rhs)
    out.set_objective(model.objective, model.objective_sense)
    return out
