"""Tabular constrained MDP model and the two policy representations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9
OCCUPANCY_SUM_TOL = 1e-8
ZERO_OCCUPANCY_TOL = 1e-12


class ModelShapeError(ValueError):
    """Model and policy (or other operands) have inconsistent dimensions."""


@dataclass(frozen=True)
class Cmdp:
    """Constrained MDP with costs ``c_0..c_m``.

    ``transitions[s, a, s']`` is p(s'|s,a); ``costs[i, s, a]`` is component i,
    where component 0 is the optimised loss and 1..m are budgeted.
    """

    transitions: np.ndarray
    costs: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        p = np.array(self.transitions, dtype=float)
        c = np.array(self.costs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        tau = np.atleast_1d(np.array(self.thresholds, dtype=float))
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ModelShapeError(f"transitions must be S x A x S, got {p.shape}")
        if c.ndim != 3 or c.shape[1:] != p.shape[:2]:
            raise ModelShapeError(f"costs must be (m+1) x S x A, got {c.shape}")
        if tau.shape != (c.shape[0] - 1,):
            raise ModelShapeError(
                f"expected {c.shape[0] - 1} thresholds, got {tau.shape[0]}")
        for arr in (p, c, tau):
            arr.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "thresholds", tau)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.costs.shape[0] - 1

    def with_transitions(self, transitions) -> "Cmdp":
        return Cmdp(transitions, self.costs, self.thresholds)

    def with_thresholds(self, thresholds) -> "Cmdp":
        return Cmdp(self.transitions, self.costs, thresholds)


@dataclass(frozen=True)
class StationaryPolicy:
    probs: np.ndarray

    def __post_init__(self):
        pi = np.array(self.probs, dtype=float)
        if pi.ndim != 2:
            raise ModelShapeError(f"policy must be S x A, got {pi.shape}")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1) > ROW_SUM_TOL):
            raise ValueError("policy rows must be probability vectors")
        pi.setflags(write=False)
        object.__setattr__(self, "probs", pi)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "StationaryPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "StationaryPolicy":
        actions = np.asarray(actions, dtype=int)
        pi = np.zeros((actions.size, n_actions))
        pi[np.arange(actions.size), actions] = 1.0
        return cls(pi)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


@dataclass(frozen=True)
class OccupancyMeasure:
    """Long-run state-action visit frequencies ``mu[s, a]``."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 2:
            raise ModelShapeError(f"occupancy must be S x A, got {mu.shape}")
        if np.any(mu < 0) or abs(mu.sum() - 1) > OCCUPANCY_SUM_TOL:
            raise ValueError("occupancy must be nonnegative and sum to 1")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    def flow_residual(self, model: Cmdp) -> float:
        """Largest violation of flow conservation under ``model``."""
        inflow = np.einsum("sa,sat->t", self.mu, model.transitions)
        return float(np.max(np.abs(self.mu.sum(axis=1) - inflow)))


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    magnitude: float


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(f"{v.kind} at {v.location}: {v.magnitude:.3g}"
                         for v in self.violations)


def validate_cmdp(model: Cmdp) -> ValidationReport:
    """Report every invariant violation of ``model`` without raising."""
    found = []
    p, c, tau = model.transitions, model.costs, model.thresholds
    for s, a, t in zip(*np.nonzero(p < 0)):
        found.append(Violation("negative-probability", (int(s), int(a), int(t)),
                               float(-p[s, a, t])))
    gap = np.abs(p.sum(axis=2) - 1.0)
    for s, a in zip(*np.nonzero(gap > ROW_SUM_TOL)):
        found.append(Violation("row-sum", (int(s), int(a)), float(gap[s, a])))
    excess = np.maximum(c - 1.0, 0.0) + np.maximum(-c, 0.0)
    for i, s, a in zip(*np.nonzero(excess > 0)):
        found.append(Violation("cost-range", (int(i), int(s), int(a)),
                               float(excess[i, s, a])))
    excess = np.maximum(tau - 1.0, 0.0) + np.maximum(-tau, 0.0)
    for i in np.nonzero(excess > 0)[0]:
        found.append(Violation("threshold-range", (int(i) + 1,), float(excess[i])))
    for name, arr in (("transitions", p), ("costs", c), ("thresholds", tau)):
        if not np.all(np.isfinite(arr)):
            found.append(Violation("non-finite", (name,), float("nan")))
    return ValidationReport(tuple(found))


def policy_from_occupancy(mu: OccupancyMeasure | np.ndarray) -> StationaryPolicy:
    """pi(a|s) = mu(s,a) / sum_a' mu(s,a'); unvisited states act uniformly."""
    mu = mu.mu if isinstance(mu, OccupancyMeasure) else np.asarray(mu, dtype=float)
    totals = mu.sum(axis=1, keepdims=True)
    visited = totals > ZERO_OCCUPANCY_TOL
    pi = np.where(visited, mu / np.where(visited, totals, 1.0), 1.0 / mu.shape[1])
    # exact renormalisation keeps row sums within the policy invariant
    pi /= pi.sum(axis=1, keepdims=True)
    return StationaryPolicy(pi)


def induced_chain(model: Cmdp | np.ndarray, policy: StationaryPolicy) -> np.ndarray:
    """State-to-state transition matrix under ``policy``."""
    p = model.transitions if isinstance(model, Cmdp) else np.asarray(model)
    if p.shape[:2] != policy.probs.shape:
        raise ModelShapeError(
            f"model is {p.shape[0]}x{p.shape[1]} but policy is "
            f"{policy.probs.shape[0]}x{policy.probs.shape[1]}")
    return np.einsum("sa,sat->st", policy.probs, p)
