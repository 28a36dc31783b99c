"""Average-cost dynamic programming on tabular models.

Relative value iteration runs on the aperiodicity-transformed model
``p~ = (1 - theta) I + theta p`` with cost ``theta c``; the transform keeps the
bias unchanged and scales the gain by ``theta``, which is undone on return.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .cmdp import StationaryPolicy, induced_chain

APERIODICITY_BLEND = 0.99
MAX_RVI_ITER = 10**6


class NonConvergenceError(RuntimeError):
    """Value iteration did not settle; in practice a non-communicating model."""


class UnreachableTargetError(ValueError):
    pass


class ReducibleChainError(ValueError):
    def __init__(self, closed_classes):
        self.closed_classes = closed_classes
        super().__init__(f"induced chain is reducible; closed classes: {closed_classes}")


class NonCommunicatingError(ValueError):
    pass


@dataclass(frozen=True)
class AvgCostSolution:
    gain: float
    bias: np.ndarray
    greedy_policy: StationaryPolicy
    iterations: int = 0


@dataclass(frozen=True)
class PolicyEvaluation:
    gain: float
    bias: np.ndarray
    stationary_distribution: np.ndarray


def default_rvi_tol(n_states: int) -> float:
    return 1e-9 * n_states


def exploration_cost(n_states: int, target: int, n_actions: int = 1) -> np.ndarray:
    """Unit cost everywhere except in ``target``."""
    if not 0 <= target < n_states:
        raise IndexError(f"target {target} outside 0..{n_states - 1}")
    cost = np.ones((n_states, n_actions))
    cost[target] = 0.0
    return cost


def _support_graph(transitions) -> np.ndarray:
    p = np.asarray(transitions)
    return p.max(axis=1) > 0 if p.ndim == 3 else p > 0


def can_reach(transitions, target: int) -> np.ndarray:
    """Boolean mask of states with a positive-probability path to ``target``."""
    adj = _support_graph(transitions)
    reach = np.zeros(adj.shape[0], dtype=bool)
    reach[target] = True
    frontier = [target]
    while frontier:
        preds = np.flatnonzero(adj[:, frontier].any(axis=1) & ~reach)
        reach[preds] = True
        frontier = list(preds)
    return reach


def is_communicating(transitions) -> bool:
    n, _ = connected_components(_support_graph(transitions), directed=True,
                                connection="strong")
    return n == 1


def closed_classes(chain: np.ndarray) -> list:
    adj = chain > 0
    n, labels = connected_components(adj, directed=True, connection="strong")
    out = []
    for c in range(n):
        members = np.flatnonzero(labels == c)
        leaves = adj[members][:, labels != c].any()
        if not leaves:
            out.append([int(s) for s in members])
    return out


def relative_value_iteration(transitions, cost, rvi_tol: float | None = None,
                             target: int | None = None,
                             blend: float = APERIODICITY_BLEND,
                             max_iter: int = MAX_RVI_ITER) -> AvgCostSolution:
    """Solve the average-cost optimality equation by relative value iteration.

    With ``target`` set, that state is made absorbing (all its rows become a
    self-loop), so for the exploration cost the gain is 0 and the bias is the
    minimal expected hitting time of ``target``. The greedy action in the
    target itself is then chosen by one-step lookahead in the original rows.
    """
    p = np.asarray(transitions, dtype=float)
    cost = np.asarray(cost, dtype=float)
    S, A = cost.shape
    tol = default_rvi_tol(S) if rvi_tol is None else rvi_tol
    if target is not None:
        original = p
        p = p.copy()
        p[target] = 0.0
        p[target, :, target] = 1.0
    P = p.reshape(S * A, S)
    c = blend * cost.reshape(S * A)
    keep = 1.0 - blend

    h = np.zeros(S)
    diff = np.zeros(S)
    for it in range(1, max_iter + 1):
        q = c + blend * (P @ h)
        v = q.reshape(S, A).min(axis=1) + keep * h
        diff = v - h
        h = v - v.min()
        if diff.max() - diff.min() < tol:
            break
    else:
        raise NonConvergenceError(
            f"relative value iteration did not converge in {max_iter} iterations")

    gain = 0.5 * (diff.max() + diff.min()) / blend
    q = (cost.reshape(S * A) + P @ h).reshape(S, A)
    if target is not None:
        q[target] = original[target] @ h
    actions = _argmin_lowest(q)
    return AvgCostSolution(float(gain), h,
                           StationaryPolicy.deterministic(actions, A), it)


def _argmin_lowest(q: np.ndarray) -> np.ndarray:
    best = q.min(axis=1, keepdims=True)
    tie = 1e-9 * np.maximum(1.0, np.abs(best))
    return np.argmax(q <= best + tie, axis=1)


def shortest_path_policy(transitions, target: int,
                         rvi_tol: float | None = None) -> StationaryPolicy:
    """Greedy policy of the exploration MDP steering towards ``target``."""
    return shortest_path_solution(transitions, target, rvi_tol).greedy_policy


def shortest_path_solution(transitions, target: int,
                           rvi_tol: float | None = None) -> AvgCostSolution:
    p = np.asarray(transitions)
    S, A = p.shape[:2]
    cost = exploration_cost(S, target, A)
    unreachable = ~can_reach(p, target)
    if unreachable.any():
        raise NonConvergenceError(
            f"target {target} unreachable from states {np.flatnonzero(unreachable).tolist()}")
    return relative_value_iteration(p, cost, rvi_tol, target=target)


def expected_hitting_times(transitions, policy: StationaryPolicy,
                           target: int) -> np.ndarray:
    """Expected steps to reach ``target`` under ``policy`` (linear solve)."""
    chain = induced_chain(np.asarray(transitions, dtype=float), policy)
    S = chain.shape[0]
    if not 0 <= target < S:
        raise IndexError(f"target {target} outside 0..{S - 1}")
    bad = ~can_reach(chain, target)
    if bad.any():
        raise UnreachableTargetError(
            f"target {target} unreachable from {np.flatnonzero(bad).tolist()}")
    rest = np.flatnonzero(np.arange(S) != target)
    system = np.eye(rest.size) - chain[np.ix_(rest, rest)]
    h = np.zeros(S)
    h[rest] = np.linalg.solve(system, np.ones(rest.size))
    return h


def diameter(transitions, rvi_tol: float | None = None) -> float:
    """Max over ordered state pairs of the minimal expected travel time."""
    p = np.asarray(transitions, dtype=float)
    if not is_communicating(p):
        raise NonCommunicatingError("model is not communicating (infinite diameter)")
    S = p.shape[0]
    best = 0.0
    for target in range(S):
        bias = shortest_path_solution(p, target, rvi_tol).bias
        others = np.delete(bias, target)
        if others.size:
            best = max(best, float(others.max()))
    return best


def stationary_distribution(chain: np.ndarray) -> np.ndarray:
    S = chain.shape[0]
    system = chain.T - np.eye(S)
    system[-1] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    q = np.linalg.solve(system, rhs)
    q = np.maximum(q, 0.0)
    return q / q.sum()


def policy_gain(transitions, policy: StationaryPolicy, cost) -> PolicyEvaluation:
    """Gain, min-normalised bias and stationary distribution of ``policy``.

    Only irreducible induced chains are supported.
    """
    chain = induced_chain(np.asarray(transitions, dtype=float), policy)
    classes = closed_classes(chain)
    n_comp, _ = connected_components(chain > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ReducibleChainError(classes)
    q = stationary_distribution(chain)
    r = np.einsum("sa,sa->s", policy.probs, np.asarray(cost, dtype=float))
    gain = float(q @ r)
    S = chain.shape[0]
    bias = np.linalg.solve(np.eye(S) - chain + np.outer(np.ones(S), q), r - gain)
    return PolicyEvaluation(gain, bias - bias.min(), q)
