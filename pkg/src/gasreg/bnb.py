"""Linear programming and branch-and-bound over the in-memory models.

The LP kernel is a dense bounded-variable primal simplex with a phase-1
artificial start, row scaling and a Bland anti-cycling fallback.  The
branch-and-bound layer does a depth-first dive to find an incumbent fast
and then switches to best-first selection on the node bound.
"""

from __future__ import annotations

import heapq
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .milp.model import MilpModel, ModelError, Sense
from .milp.reformulate import reformulate_big_m

_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2


class LpError(RuntimeError):
    pass


@dataclass(frozen=True)
class LpSolution:
    status: str  # optimal / infeasible / unbounded / iteration_limit
    objective: float
    values: dict[str, float]
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class BnbConfig:
    feas_tol: float = 1e-7
    int_tol: float = 1e-6
    gap_tol: float = 1e-6
    node_limit: int = 1_000_000
    log_every: int = 1000


@dataclass
class BnbResult:
    status: str  # optimal / infeasible / node_limit
    objective: float
    assignment: dict[str, float]
    bound: float
    nodes: int


class _Simplex:
    """min c.x  s.t.  A x = b  within variable bounds."""

    BLAND_AFTER = 1000

    def __init__(self, A, b, lb, ub):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.m, self.n = A.shape
        self.iterations = 0
        self._degenerate = 0

    def _values(self, basis, status):
        x = np.where(status == _AT_UPPER, self.ub, self.lb)
        x[~np.isfinite(x)] = 0.0
        x[basis] = 0.0
        rhs = self.b - self.A @ x
        xb = np.linalg.solve(self.A[:, basis], rhs)
        x[basis] = xb
        return x

    def run(self, c, basis, status, max_iter=20000, feas_tol=1e-9):
        """Optimize from a basic feasible start; mutates basis and status."""
        m, n = self.m, self.n
        while True:
            if self.iterations >= max_iter:
                return "iteration_limit", self._values(basis, status)
            self.iterations += 1
            B = self.A[:, basis]
            try:
                x = self._values(basis, status)
                y = np.linalg.solve(B.T, c[basis])
            except np.linalg.LinAlgError as exc:
                raise LpError(f"singular basis: {exc}")
            d = c - self.A.T @ y  # reduced costs
            bland = self._degenerate >= self.BLAND_AFTER

            entering = -1
            best = feas_tol
            for j in range(n):
                if status[j] == _BASIC:
                    continue
                improving = (
                    (status[j] == _AT_LOWER and d[j] < -feas_tol)
                    or (status[j] == _AT_UPPER and d[j] > feas_tol)
                )
                if not improving:
                    continue
                if bland:
                    entering = j
                    break
                if abs(d[j]) > best:
                    best = abs(d[j])
                    entering = j
            if entering < 0:
                return "optimal", x

            j = entering
            direction = 1.0 if status[j] == _AT_LOWER else -1.0
            col = np.linalg.solve(B, self.A[:, j]) * direction

            # ratio test: basic variables hitting a bound, or the entering
            # variable reaching its other bound
            limit = self.ub[j] - self.lb[j]
            leave, leave_kind = -1, _AT_LOWER
            for i in range(m):
                bi = basis[i]
                if col[i] > feas_tol:
                    room = (x[bi] - self.lb[bi]) / col[i]
                    kind = _AT_LOWER
                elif col[i] < -feas_tol:
                    room = (x[bi] - self.ub[bi]) / col[i]
                    kind = _AT_UPPER
                else:
                    continue
                if not math.isfinite(room):
                    continue
                if room < limit - 1e-12 or (bland and room <= limit and leave < 0):
                    limit, leave, leave_kind = room, i, kind
                elif abs(room - limit) <= 1e-12 and leave >= 0 and bland:
                    if bi < basis[leave]:
                        leave, leave_kind = i, kind
            if not math.isfinite(limit):
                return "unbounded", x
            if limit <= feas_tol:
                self._degenerate += 1
            else:
                self._degenerate = 0
            if leave < 0:
                # bound flip, basis unchanged
                status[j] = _AT_UPPER if status[j] == _AT_LOWER else _AT_LOWER
                continue
            status[basis[leave]] = leave_kind
            basis[leave] = j
            status[j] = _BASIC


def _standard_form(model: MilpModel, bound_overrides=None):
    names = list(model.variables)
    index = {v: k for k, v in enumerate(names)}
    n, m = len(names), len(model.constraints)
    lb = np.array([model.variables[v].lb for v in names])
    ub = np.array([model.variables[v].ub for v in names])
    if bound_overrides:
        for var, (lo, hi) in bound_overrides.items():
            k = index[var]
            lb[k] = max(lb[k], lo)
            ub[k] = min(ub[k], hi)
    if np.any(lb > ub):
        return None  # trivially infeasible node

    A = np.zeros((m, n + m))
    b = np.zeros(m)
    slack_lb = np.zeros(m)
    slack_ub = np.zeros(m)
    for i, con in enumerate(model.constraints):
        for var, coef in con.coeffs:
            A[i, index[var]] = coef
        b[i] = con.rhs
        # row scaling over the structural part only; the slack then enters
        # with unit coefficient and unscaled bounds
        scale = max(np.max(np.abs(A[i, :n])), abs(b[i]), 1e-12)
        A[i, :n] /= scale
        b[i] /= scale
        A[i, n + i] = 1.0
        if con.sense is Sense.LE:
            slack_lb[i], slack_ub[i] = 0.0, math.inf
        elif con.sense is Sense.GE:
            slack_lb[i], slack_ub[i] = -math.inf, 0.0
        else:
            slack_lb[i], slack_ub[i] = 0.0, 0.0

    c = np.zeros(n + m)
    sign = 1.0 if model.objective_sense == "min" else -1.0
    for var, coef in model.objective:
        c[index[var]] += sign * coef
    return names, A, b, np.concatenate([lb, slack_lb]), np.concatenate([ub, slack_ub]), c


def solve_lp(model: MilpModel, bound_overrides: dict | None = None,
             feas_tol: float = 1e-9) -> LpSolution:
    """LP relaxation of an indicator-free model (binaries relax to [0, 1])."""
    if model.indicators:
        raise ModelError("reformulate indicator constraints before solving")
    form = _standard_form(model, bound_overrides)
    if form is None:
        return LpSolution("infeasible", math.inf, {}, 0)
    names, A, b, lb, ub, c = form
    n_struct = len(names)
    m, n = A.shape

    # initial point: structurals at a finite bound, slacks absorb what they
    # can, artificials take the rest
    status = np.full(n, _AT_LOWER, dtype=int)
    for j in range(n):
        if not math.isfinite(lb[j]):
            status[j] = _AT_UPPER if math.isfinite(ub[j]) else _AT_LOWER
    x0 = np.where(status == _AT_UPPER, ub, lb)
    x0[~np.isfinite(x0)] = 0.0
    resid = b - A @ x0
    # give each slack as much of its row residual as its bounds allow
    for i in range(m):
        s = n_struct + i
        take = min(max(x0[s] + resid[i], lb[s]), ub[s])
        resid[i] -= take - x0[s]
        x0[s] = take

    art_cols = []
    for i in range(m):
        if abs(resid[i]) > feas_tol:
            art_cols.append((i, 1.0 if resid[i] > 0 else -1.0, abs(resid[i])))
    n_art = len(art_cols)
    A_full = np.hstack([A, np.zeros((m, n_art))])
    lb_full = np.concatenate([lb, np.zeros(n_art)])
    ub_full = np.concatenate([ub, np.full(n_art, math.inf)])
    basis = []
    used_rows = set()
    for k, (i, sgn, _) in enumerate(art_cols):
        A_full[i, n + k] = sgn
        basis.append(n + k)
        used_rows.add(i)
    # rows already consistent keep their slack basic
    for i in range(m):
        if i not in used_rows:
            basis.append(n_struct + i)
            if status[n_struct + i] == _BASIC:
                raise LpError("slack reuse")
    basis = np.array(sorted(basis, key=lambda col: _row_of(col, n, n_struct, art_cols)), dtype=int)
    status_full = np.concatenate([status, np.full(n_art, _AT_LOWER, dtype=int)])
    status_full[basis] = _BASIC

    sx = _Simplex(A_full, b, lb_full, ub_full)
    if n_art:
        c1 = np.zeros(n + n_art)
        c1[n:] = 1.0
        state, x = sx.run(c1, basis, status_full)
        if state == "iteration_limit":
            return LpSolution("iteration_limit", math.inf, {}, sx.iterations)
        if float(c1 @ x) > 1e-7:
            return LpSolution("infeasible", math.inf, {}, sx.iterations)
        # pin artificials at zero for phase 2
        sx.ub[n:] = 0.0
    c2 = np.concatenate([c, np.zeros(n_art)])
    state, x = sx.run(c2, basis, status_full)
    if state == "iteration_limit":
        return LpSolution("iteration_limit", math.inf, {}, sx.iterations)
    values = {name: float(x[k]) for k, name in enumerate(names)}
    if state == "unbounded":
        return LpSolution("unbounded", -math.inf, values, sx.iterations)
    sign = 1.0 if model.objective_sense == "min" else -1.0
    obj = sign * float(c2[: len(x)] @ x)
    return LpSolution("optimal", obj, values, sx.iterations)


def _row_of(col, n, n_struct, art_cols):
    if col >= n:
        return art_cols[col - n][0]
    return col - n_struct


def _branch_rank(name: str) -> tuple:
    prefix = name.split("_", 1)[0]
    order = {"th": 0, "m": 1, "d": 2}.get(prefix, 3)
    t = name.rsplit("_t", 1)
    step = int(t[1]) if len(t) == 2 and t[1].isdigit() else 1 << 30
    return (order, step, name)


def solve_bnb(model: MilpModel, config: BnbConfig = BnbConfig(),
              incumbent: dict[str, float] | None = None) -> BnbResult:
    """Branch and bound on binaries with LP relaxation bounds.

    An optional starting incumbent (from a simulation-derived assignment)
    tightens pruning from the first node on.
    """
    plain = reformulate_big_m(model) if model.indicators else model
    if plain.objective_sense == "max":
        # the search bookkeeping below assumes minimization
        flipped = MilpModel(plain.name)
        flipped.variables = dict(plain.variables)
        for con in plain.constraints:
            flipped.add_constraint(con.name, con.coeffs, con.sense, con.rhs)
        flipped.set_objective([(v, -c) for v, c in plain.objective], "min")
        res = solve_bnb(flipped, config, incumbent)
        return BnbResult(res.status, -res.objective, res.assignment,
                         -res.bound, res.nodes)
    binaries = plain.binary_names
    objective_integral = all(
        float(coef).is_integer() and plain.variables[var].is_binary
        for var, coef in plain.objective
    )

    best_obj = math.inf
    best_assignment: dict[str, float] = {}
    if incumbent is not None:
        best_obj = sum(coef * incumbent[var] for var, coef in plain.objective)
        best_assignment = dict(incumbent)

    nodes_explored = 0
    counter = 0
    root = solve_lp(plain)
    if root.status == "infeasible":
        return BnbResult("infeasible", math.inf, {}, math.inf, 1)
    if root.status == "iteration_limit":
        return BnbResult("node_limit", best_obj, best_assignment, -math.inf, 1)
    heap: list = []
    # (bound, insertion, overrides, lp)
    heapq.heappush(heap, (root.objective, counter, {}, root))
    diving = True

    def prune_bound(bound):
        if objective_integral:
            return bound > best_obj - 1.0 + config.gap_tol
        return bound > best_obj - config.gap_tol

    stack: list = [(root.objective, counter, {}, root)]
    while stack or heap:
        if nodes_explored >= config.node_limit:
            bound = min([h[0] for h in heap] + [s[0] for s in stack], default=best_obj)
            return BnbResult("node_limit", best_obj, best_assignment, bound, nodes_explored)
        if diving and stack:
            bound, _, overrides, lp = stack.pop()
        elif heap:
            bound, _, overrides, lp = heapq.heappop(heap)
            diving = False
        else:
            break
        nodes_explored += 1
        if nodes_explored % config.log_every == 0:
            gap = best_obj - bound
            print(
                f"bnb: node {nodes_explored} bound {bound:.6g} "
                f"incumbent {best_obj:.6g} gap {gap:.3g}",
                file=sys.stderr,
            )
        if prune_bound(bound):
            continue

        frac_var, frac = None, 0.0
        candidates = []
        for name in binaries:
            v = lp.values[name]
            f = abs(v - round(v))
            if f > config.int_tol:
                candidates.append((-min(f, 1.0 - f), _branch_rank(name), name, v))
        if not candidates:
            # integral: candidate incumbent
            if lp.objective < best_obj - config.gap_tol:
                best_obj = lp.objective
                best_assignment = dict(lp.values)
                diving = False
            continue
        candidates.sort()
        _, _, frac_var, value = candidates[0]

        children = []
        for lo, hi in (((1.0, 1.0)), ((0.0, 0.0))):
            child = dict(overrides)
            child[frac_var] = (lo, hi)
            res = solve_lp(plain, child)
            if res.status in ("infeasible", "iteration_limit"):
                continue
            child_bound = max(bound, res.objective)
            if prune_bound(child_bound):
                continue
            counter += 1
            children.append((child_bound, counter, child, res))
        # dive into the most promising child, park the other
        children.sort(key=lambda c: c[0])
        if diving:
            for node in reversed(children[1:]):
                heapq.heappush(heap, node)
            if children:
                stack.append(children[0])
        else:
            for node in children:
                heapq.heappush(heap, node)

    if math.isinf(best_obj):
        return BnbResult("infeasible", math.inf, {}, math.inf, nodes_explored)
    return BnbResult("optimal", best_obj, best_assignment, best_obj, nodes_explored)


def warm_start_from_simulation(model: MilpModel, network, times, states,
                               schedules, opt_config,
                               feas_tol: float = 1e-7) -> dict | None:
    """Seed an incumbent for the time-expanded model from a trajectory.

    Continuous variables come straight from the states; binaries from the
    pushing-target-value structure of each regulator operating point.  The
    seed is only used when it verifies feasible; a rejected seed merely
    logs a notice and the solve proceeds from a cold start.
    """
    from .milp.verify import verify_solution
    from .opt import opt_assignment

    if not states:
        return None
    try:
        asg = opt_assignment(model, network, times, states, schedules,
                             opt_config)
        report = verify_solution(model, asg, feas_tol=feas_tol)
    except (KeyError, ValueError, ModelError) as exc:
        print(f"warm start seed rejected ({exc}); cold start", file=sys.stderr)
        return None
    if not report.feasible:
        worst = report.worst()
        print(f"warm start seed rejected (violation {worst.name}: "
              f"{worst.amount:.3g}); cold start", file=sys.stderr)
        return None
    return asg
