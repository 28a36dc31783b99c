"""Random model generators and brute-force oracles shared by the tests."""
import numpy as np

from psconrl.cmdp import Cmdp, StationaryPolicy, induced_chain
from psconrl.planning import is_communicating


def random_transitions(rng, S, A, density=1.0):
    """Row-stochastic tensor; with density < 1 some entries are zeroed."""
    p = rng.random((S, A, S)) + 1e-3
    if density < 1.0:
        p *= rng.random((S, A, S)) < density
        empty = p.sum(axis=2) == 0
        p[empty, rng.integers(S)] = 1.0
    return p / p.sum(axis=2, keepdims=True)


def random_communicating(rng, S, A, density=0.5):
    while True:
        p = random_transitions(rng, S, A, density)
        if is_communicating(p):
            return p


def random_cmdp(rng, S, A, m, density=1.0, binary_costs=False):
    p = random_transitions(rng, S, A, density)
    costs = rng.random((m + 1, S, A))
    if binary_costs:
        costs = np.round(costs)
    return Cmdp(p, costs, rng.random(m))


def two_state_chain_gain(p, costs, grid):
    """Gains of every policy pi(a1|s) on a grid, for S = A = 2.

    Returns an array [n_costs, len(grid), len(grid)] indexed by
    (pi(a1|s0), pi(a1|s1)), using the closed-form 2-state stationary law.
    """
    x = grid[:, None]
    y = grid[None, :]
    p01 = (1 - x) * p[0, 0, 1] + x * p[0, 1, 1]
    p10 = (1 - y) * p[1, 0, 0] + y * p[1, 1, 0]
    q0 = p10 / (p01 + p10)
    out = []
    for c in costs:
        r0 = (1 - x) * c[0, 0] + x * c[0, 1]
        r1 = (1 - y) * c[1, 0] + y * c[1, 1]
        out.append(q0 * r0 + (1 - q0) * r1)
    return np.array(out)


def grid_search_optimum(model, step=0.005):
    grid = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    gains = two_state_chain_gain(model.transitions, model.costs, grid)
    ok = np.all(gains[1:] <= model.thresholds[:, None, None], axis=0)
    if not ok.any():
        return None
    return float(gains[0][ok].min())


def stationary_by_power(chain, n=20000):
    q = np.full(chain.shape[0], 1.0 / chain.shape[0])
    lazy = 0.5 * (chain + np.eye(chain.shape[0]))
    for _ in range(n):
        q = q @ lazy
    return q


def policy(probs):
    return StationaryPolicy(np.asarray(probs, dtype=float))


def chain(model, pi):
    return induced_chain(model, pi)


CRITERIA_LINES = []


def verdict(number, label, ok, detail):
    """Record and print one acceptance line, then assert it."""
    line = f"criterion {number} [{label}]: {'PASS' if ok else 'FAIL'} - {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    assert ok, line
