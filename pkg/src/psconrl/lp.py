"""Dense two-phase simplex and the occupancy-measure LP for CMDPs.

The solver works on a full tableau with largest-coefficient pricing and a
Bland's-rule fallback on degenerate stalls. Problem
sizes in this package stay in the low thousands of variables, where a dense
tableau is fast enough and gives an exact phase-1 infeasibility verdict.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, OccupancyMeasure, StationaryPolicy, policy_from_occupancy

FEAS_TOL = 1e-7
OPT_TOL = 1e-8
PIVOT_TOL = 1e-7
RATIO_TIE_TOL = 1e-12
DEGENERATE_SWITCH = 50
REDUCED_COST_TOL = 1e-11

LE, EQ, GE = "<=", "==", ">="


class LpInputError(ValueError):
    pass


class SolverStallError(RuntimeError):
    """Iteration limit reached before the simplex terminated."""


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpProblem:
    """min objective @ x  s.t.  rows of constraint_matrix (sense) rhs, x >= lower."""

    objective: np.ndarray
    constraint_matrix: np.ndarray
    constraint_rhs: np.ndarray
    senses: tuple
    lower: np.ndarray | None = None

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    @property
    def n_rows(self) -> int:
        return len(self.constraint_rhs)

    def drop_rows(self, rows) -> "LpProblem":
        keep = np.setdiff1d(np.arange(self.n_rows), np.atleast_1d(rows))
        return LpProblem(self.objective, self.constraint_matrix[keep],
                         self.constraint_rhs[keep],
                         tuple(self.senses[i] for i in keep), self.lower)


@dataclass(frozen=True)
class LpOutcome:
    status: Status
    solution: np.ndarray | None = None
    objective_value: float | None = None
    phase1_value: float = 0.0
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _check(problem: LpProblem):
    c = np.asarray(problem.objective, dtype=float)
    A = np.asarray(problem.constraint_matrix, dtype=float).reshape(-1, c.size)
    b = np.asarray(problem.constraint_rhs, dtype=float)
    lb = None if problem.lower is None else np.asarray(problem.lower, float)
    if A.shape[0] != b.size or len(problem.senses) != b.size or (
            lb is not None and lb.size != c.size):
        raise LpInputError("inconsistent LP dimensions")
    finite = np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(b).all()
    if not finite or (lb is not None and not np.isfinite(lb).all()):
        raise LpInputError("LP data must be finite")
    bad = set(problem.senses) - {LE, EQ, GE}
    if bad:
        raise LpInputError(f"unknown constraint senses {bad}")
    return c, A, b, lb


class _Tableau:
    """Row-major simplex tableau; the last row holds reduced costs."""

    def __init__(self, table, basis, limit):
        self.T = table
        self.basis = basis
        self.limit = limit
        self.iterations = 0

    def pivot(self, r, j):
        T = self.T
        row = T[r]
        row /= row[j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= col[:, None] * row
        self.basis[r] = j

    def run(self, allowed):
        """Iterate to optimality; returns False if the LP is unbounded.

        Entering columns follow the most negative reduced cost. After
        ``DEGENERATE_SWITCH`` consecutive zero-length steps the loop falls back
        to Bland's rule until progress resumes, which rules out cycling.
        Ratio-test ties go to the largest pivot element (Bland mode: lowest
        basic index), keeping tiny cancellation residues out of the pivot.
        """
        T = self.T
        k = T.shape[0] - 1
        reduced = T[k, :-1]
        rhs = T[:k, -1]
        blocked = np.where(allowed, 0.0, np.inf)
        stalled = 0
        while True:
            priced = reduced + blocked
            bland = stalled >= DEGENERATE_SWITCH
            if bland:
                eligible = priced < -REDUCED_COST_TOL
                j = int(eligible.argmax())
                if not eligible[j]:
                    return True
            else:
                j = int(priced.argmin())
                if not priced[j] < -REDUCED_COST_TOL:
                    return True
            column = T[:k, j]
            usable = column > PIVOT_TOL
            if not usable.any():
                return False
            ratios = np.where(usable, rhs / np.where(usable, column, 1.0), np.inf)
            best = ratios.min()
            tied = ratios <= best + RATIO_TIE_TOL * max(1.0, abs(best))
            if bland:
                rows = np.flatnonzero(tied)
                r = rows[self.basis[rows].argmin()]
            else:
                r = int(np.where(tied, column, -np.inf).argmax())
            stalled = stalled + 1 if best <= RATIO_TIE_TOL else 0
            self.iterations += 1
            if self.iterations > self.limit:
                raise SolverStallError(
                    f"simplex exceeded {self.limit} iterations")
            self.pivot(r, j)


def solve_lp(problem: LpProblem, max_iter: int | None = None,
             feas_tol: float = FEAS_TOL) -> LpOutcome:
    """Two-phase primal simplex on a dense tableau."""
    c, A, b, lb = _check(problem)
    n, k = c.size, b.size
    limit = max_iter if max_iter is not None else 50 * (n + k)

    if lb is not None:
        b = b - A @ lb
    senses = list(problem.senses)
    flip = b < 0
    if flip.any():
        A = np.where(flip[:, None], -A, A)
        b = np.abs(b)
        for i in np.flatnonzero(flip):
            senses[i] = {LE: GE, GE: LE, EQ: EQ}[senses[i]]

    n_slack = sum(s != EQ for s in senses)
    art_rows = [i for i, s in enumerate(senses) if s != LE]
    n_art = len(art_rows)
    width = n + n_slack + n_art
    T = np.zeros((k + 1, width + 1))
    T[:k, :n] = A
    T[:k, -1] = b
    basis = np.empty(k, dtype=int)
    col = n
    for i, s in enumerate(senses):
        if s == LE:
            T[i, col] = 1.0
            basis[i] = col
            col += 1
        elif s == GE:
            T[i, col] = -1.0
            col += 1
    for idx, i in enumerate(art_rows):
        T[i, n + n_slack + idx] = 1.0
        basis[i] = n + n_slack + idx

    tab = _Tableau(T, basis, limit)
    is_art = np.zeros(width, dtype=bool)
    is_art[n + n_slack:] = True

    phase1 = 0.0
    if n_art:
        T[k, :] = 0.0
        T[k, :-1] = -T[art_rows, :-1].sum(axis=0)
        T[k, :-1][is_art] = 0.0
        T[k, -1] = -T[art_rows, -1].sum()
        tab.run(np.ones(width, dtype=bool))
        phase1 = -T[k, -1]
        if phase1 > feas_tol:
            return LpOutcome(Status.INFEASIBLE, phase1_value=phase1,
                             iterations=tab.iterations)
        # drive zero-level artificials out of the basis; redundant rows go
        keep = np.ones(k + 1, dtype=bool)
        for r in np.flatnonzero(is_art[tab.basis]):
            cands = np.flatnonzero((np.abs(T[r, :-1]) > PIVOT_TOL) & ~is_art)
            if cands.size:
                tab.pivot(r, cands[0])
            else:
                keep[r] = False
        if not keep.all():
            tab.T = T = T[keep]
            tab.basis = basis = tab.basis[keep[:-1]]
            k = T.shape[0] - 1

    cost = np.zeros(width)
    cost[:n] = c
    T[k, :-1] = cost - cost[tab.basis] @ T[:k, :-1]
    T[k, -1] = -cost[tab.basis] @ T[:k, -1]
    if not tab.run(~is_art):
        return LpOutcome(Status.UNBOUNDED, phase1_value=phase1,
                         iterations=tab.iterations)

    x = np.zeros(width)
    x[tab.basis] = T[:k, -1]
    x = np.maximum(x[:n], 0.0)
    if lb is not None:
        x += lb
    return LpOutcome(Status.OPTIMAL, x, float(c @ x), phase1, tab.iterations)


@dataclass(frozen=True)
class CmdpSolution:
    occupancy: OccupancyMeasure
    policy: StationaryPolicy
    objective_value: float
    constraint_values: np.ndarray


def build_cmdp_lp(model: Cmdp, objective_index: int = 0,
                  with_budgets: bool = True,
                  drop_flow_row: int | None = None) -> LpProblem:
    """Occupancy LP: variables mu(s,a) in row-major order.

    Rows: one budget row per auxiliary cost, S flow-conservation rows, and the
    normalisation row, in that order. The flow rows plus normalisation are
    rank deficient by one; ``drop_flow_row`` omits one of them.
    """
    S, A = model.n_states, model.n_actions
    n = S * A
    m = model.n_constraints if with_budgets else 0
    flow = np.repeat(np.eye(S), A, axis=1) - model.transitions.reshape(n, S).T
    if drop_flow_row is not None:
        flow = flow[np.arange(S) != drop_flow_row]
    rows = np.empty((m + flow.shape[0] + 1, n))
    rows[:m] = model.costs[1:m + 1].reshape(m, n)
    rows[m:-1] = flow
    rows[-1] = 1.0
    rhs = np.zeros(rows.shape[0])
    rhs[:m] = model.thresholds[:m]
    rhs[-1] = 1.0
    senses = (LE,) * m + (EQ,) * (rows.shape[0] - m)
    return LpProblem(model.costs[objective_index].reshape(n), rows, rhs, senses)


def _package(model: Cmdp, x: np.ndarray) -> CmdpSolution:
    mu = x.reshape(model.n_states, model.n_actions)
    mu = mu / mu.sum()
    values = np.einsum("isa,sa->i", model.costs, mu)
    return CmdpSolution(OccupancyMeasure(mu), policy_from_occupancy(mu),
                        float(values[0]), values[1:])


def solve_constrained(model: Cmdp, drop_flow_row: int = 0) -> CmdpSolution | None:
    """Optimal constrained occupancy and policy, or ``None`` when infeasible."""
    outcome = solve_lp(build_cmdp_lp(model, drop_flow_row=drop_flow_row))
    if outcome.status is Status.INFEASIBLE:
        return None
    if outcome.status is Status.UNBOUNDED:
        # the occupancy polytope is bounded, so this is numerical breakdown
        raise SolverStallError("occupancy LP reported unbounded")
    return _package(model, outcome.solution)


def solve_unconstrained(model: Cmdp, cost_index: int = 0,
                        drop_flow_row: int = 0) -> CmdpSolution:
    """Minimise cost component ``cost_index`` ignoring every budget."""
    if not 0 <= cost_index <= model.n_constraints:
        raise IndexError(f"cost_index {cost_index} out of range")
    outcome = solve_lp(build_cmdp_lp(model, cost_index, with_budgets=False,
                                     drop_flow_row=drop_flow_row))
    if not outcome.optimal:
        raise SolverStallError(f"unconstrained occupancy LP returned {outcome.status}")
    return _package(model, outcome.solution)
