import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from psconrl.cmdp import (Cmdp, ModelShapeError, OccupancyMeasure, StationaryPolicy,
                          induced_chain, policy_from_occupancy, validate_cmdp)
from psconrl.lp import solve_constrained
from psconrl.planning import stationary_distribution

from helpers import random_transitions


def test_example1_model_is_valid(toy):
    report = validate_cmdp(toy.model)
    assert report.ok and report.violations == ()


def test_row_sum_violation_is_located():
    p = np.array([[[0.5, 0.5]], [[0.6, 0.3]]])
    report = validate_cmdp(Cmdp(p, np.zeros((1, 2, 1))))
    assert not report.ok
    (v,) = report.violations
    assert v.kind == "row-sum" and v.location == (1, 0)
    assert v.magnitude == pytest.approx(0.1)


def test_cost_range_violation():
    p = np.ones((1, 1, 1))
    costs = np.array([[[0.2]], [[1.5]]])
    (v,) = validate_cmdp(Cmdp(p, costs, [0.5])).violations
    assert (v.kind, v.location) == ("cost-range", (1, 0, 0))
    assert v.magnitude == pytest.approx(0.5)


def test_validation_collects_everything_without_raising():
    p = np.array([[[1.2, -0.2]], [[0.5, 0.4]]])
    report = validate_cmdp(Cmdp(p, np.full((2, 2, 1), 2.0), [1.5]))
    kinds = sorted({v.kind for v in report.violations})
    assert kinds == ["cost-range", "negative-probability", "row-sum", "threshold-range"]


def test_shape_errors():
    with pytest.raises(ModelShapeError):
        Cmdp(np.ones((2, 2, 3)), np.zeros((1, 2, 2)))
    with pytest.raises(ModelShapeError):
        Cmdp(np.ones((2, 1, 2)) / 2, np.zeros((2, 2, 1)), [0.1, 0.2])


def test_unconstrained_model_representable():
    model = Cmdp(np.ones((1, 1, 1)), np.zeros((1, 1)))
    assert model.n_constraints == 0 and model.thresholds.shape == (0,)


def test_uniform_occupancy_gives_uniform_policy():
    pi = policy_from_occupancy(np.full((3, 4), 1 / 12))
    assert np.allclose(pi.probs, 0.25)


def test_degenerate_occupancy_row_rule():
    mu = np.zeros((3, 2))
    mu[0, 1] = 1.0
    pi = policy_from_occupancy(OccupancyMeasure(mu))
    assert np.array_equal(pi.probs, [[0, 1], [0.5, 0.5], [0.5, 0.5]])


def test_example1_policy_matches_policy_search(toy):
    solution = solve_constrained(toy.model)
    theta, tau = 0.9, 0.5275
    best = None
    for x in np.linspace(0, 1, 1001):
        q0 = 1 / (1 + theta * x)  # time share of s0 when playing a1 w.p. x
        if q0 <= tau and (best is None or 1 - q0 < best[0]):
            best = (1 - q0, x)
    assert solution.policy.probs[0, 1] == pytest.approx(best[1], abs=1e-3)


def test_induced_chain_example1_always_a1(toy):
    P = induced_chain(toy.model, StationaryPolicy.deterministic([1, 1], 2))
    assert np.allclose(P, [[0.1, 0.9], [1.0, 0.0]])


def test_induced_chain_deterministic_is_01():
    p = np.zeros((3, 2, 3))
    for s in range(3):
        p[s, 0, (s + 1) % 3] = 1
        p[s, 1, s] = 1
    P = induced_chain(p, StationaryPolicy.deterministic([0, 1, 0], 2))
    assert set(np.unique(P)) <= {0.0, 1.0}
    assert np.array_equal(P.sum(axis=1), np.ones(3))


def test_induced_chain_uniform_is_row_average():
    p = random_transitions(np.random.default_rng(3), 3, 4)
    P = induced_chain(p, StationaryPolicy.uniform(3, 4))
    assert np.allclose(P, p.mean(axis=1), atol=1e-15)


def test_induced_chain_shape_mismatch(toy):
    with pytest.raises(ModelShapeError, match="policy"):
        induced_chain(toy.model, StationaryPolicy.uniform(3, 2))


def test_policy_invariants_enforced():
    with pytest.raises(ValueError):
        StationaryPolicy([[0.5, 0.6]])
    with pytest.raises(ValueError):
        OccupancyMeasure([[0.5, 0.6]])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_occupancy_round_trip(S, A, seed):
    rng = np.random.default_rng(seed)
    p = random_transitions(rng, S, A)
    pi = StationaryPolicy(rng.dirichlet(np.ones(A), size=S))
    q = stationary_distribution(induced_chain(p, pi))
    mu = q[:, None] * pi.probs
    again = policy_from_occupancy(mu)
    q2 = stationary_distribution(induced_chain(p, again))
    assert np.allclose(q2[:, None] * again.probs, mu, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)),
              elements=st.sampled_from([0.0, 1e-300, 1e-13, 1e-12, 0.3, 1.0, 7.0])))
def test_policy_from_occupancy_total(raw):
    total = raw.sum()
    mu = raw / total if total > 0 else raw
    pi = policy_from_occupancy(mu)
    assert np.all(pi.probs >= 0)
    assert np.allclose(pi.probs.sum(axis=1), 1.0, atol=1e-9)
