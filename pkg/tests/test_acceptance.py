"""Acceptance criteria. Each test prints one PASS/FAIL line; the lines are
repeated in the terminal summary under "acceptance criteria"."""
import time

import numpy as np
import pytest

from psconrl.agents import AgentConfig
from psconrl.cmdp import induced_chain
from psconrl.envs import make_env
from psconrl.harness import (ExperimentConfig, compute_metrics, episode_bound_violations,
                             posterior_mean, reference_solution, run)
from psconrl.lp import solve_constrained
from psconrl.planning import (closed_classes, diameter, expected_hitting_times,
                              policy_gain, shortest_path_solution)
from psconrl.posterior import init_prior

from helpers import (grid_search_optimum, random_cmdp, random_communicating,
                     two_state_chain_gain, verdict)

THETA, TAU = 0.9, 0.5275
MARS_T, MARS_T0, MARS_SEEDS = 200_000, 100_000, 10


def test_criterion_1_lp_matches_policy_evaluation():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, checked = 0.0, 0
    while checked < 50:
        S, A, m = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(0, 3))
        model = random_cmdp(rng, S, A, m, density=float(rng.uniform(0.4, 1.0)))
        sol = solve_constrained(model)
        if sol is None:
            continue
        chain = induced_chain(model, sol.policy)
        if len(closed_classes(chain)) != 1 or closed_classes(chain)[0] != list(range(S)):
            continue
        values = np.concatenate([[sol.objective_value], sol.constraint_values])
        for i in range(m + 1):
            gain = policy_gain(model.transitions, sol.policy, model.costs[i]).gain
            worst = max(worst, abs(gain - values[i]))
        checked += 1
    elapsed = time.perf_counter() - start
    verdict(1, "LP vs evaluation", worst <= 1e-6 and elapsed < 30,
            f"50 models, max |gain - LP| = {worst:.2e} (tol 1e-6), {elapsed:.1f}s (< 30s)")


def test_criterion_2_lp_matches_policy_search():
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    grid = np.linspace(0, 1, 201)
    worst, checked = 0.0, 0
    while checked < 20:
        model = random_cmdp(rng, 2, 2, 1)
        aux = two_state_chain_gain(model.transitions, model.costs[1:], grid)[0]
        model = model.with_thresholds([rng.uniform(aux.min(), aux.max())])
        sol = solve_constrained(model)
        oracle = grid_search_optimum(model, 0.005)
        if sol is None or oracle is None:
            continue
        worst = max(worst, abs(sol.objective_value - oracle))
        checked += 1
    elapsed = time.perf_counter() - start
    verdict(2, "LP vs grid search", worst <= 2e-2 and elapsed < 60,
            f"20 instances, max gap {worst:.2e} (tol 2e-2), {elapsed:.1f}s (< 60s)")


def test_criterion_3_hitting_time_identity():
    start = time.perf_counter()
    rng = np.random.default_rng(31)
    worst, exact = 0.0, True
    for _ in range(30):
        S, A = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        p = random_communicating(rng, S, A, 0.4)
        best = 0.0
        for target in range(S):
            sol = shortest_path_solution(p, target)
            h = expected_hitting_times(p, sol.greedy_policy, target)
            worst = max(worst, float(np.abs(h - sol.bias).max()))
            best = max(best, float(np.delete(sol.bias, target).max()))
        exact &= best == diameter(p)
    elapsed = time.perf_counter() - start
    verdict(3, "hitting times", worst <= 1e-6 and exact and elapsed < 60,
            f"30 models, max |bias - h| = {worst:.2e} (tol 1e-6), "
            f"max-pair == diameter: {exact}, {elapsed:.1f}s (< 60s)")


def example1_runs(out_dir):
    traces, start = {}, time.perf_counter()
    for kind in ("psconrl", "psrlcmdp"):
        cfg = ExperimentConfig(env="toy", agent=kind, horizon=100_000, n_runs=5,
                               base_seed=0, output_dir=str(out_dir / kind),
                               agent_config=AgentConfig(psrl_mode="per_step"),
                               env_params={"theta": THETA, "tau": TAU})
        traces[kind] = run(cfg)
    return traces, time.perf_counter() - start


@pytest.fixture(scope="module")
def example1(tmp_path_factory):
    out = tmp_path_factory.mktemp("example1")
    traces, elapsed = example1_runs(out)
    return out, traces, elapsed


def example1_summary(traces):
    aux = np.array([t.costs[1].mean() for t in traces])
    theta = np.array([posterior_mean(t)[0, 1, 1] for t in traces])
    return aux, theta


def test_criterion_4_psconrl_tracks_budget(example1):
    _, traces, elapsed = example1
    aux, theta = example1_summary(traces["psconrl"])
    ok = abs(aux.mean() - TAU) <= 0.05 and abs(theta.mean() - THETA) <= 0.05
    verdict("4a", "Example 1, PSConRL", ok and elapsed < 300,
            f"mean avg c1 {aux.mean():.4f} (target {TAU}+-0.05), mean theta "
            f"{theta.mean():.4f} (0.9+-0.05), per seed c1 {np.round(aux, 4).tolist()}, "
            f"both agents {elapsed:.0f}s (< 300s)")


def test_criterion_4_psrlcmdp_fails_budget(example1):
    _, traces, elapsed = example1
    aux, theta = example1_summary(traces["psrlcmdp"])
    ok = aux.mean() > TAU + 0.1 and theta.mean() < 0.85
    verdict("4b", "Example 1, PSRL-CMDP per-step", ok and elapsed < 300,
            f"mean avg c1 {aux.mean():.4f} (needs > {TAU + 0.1:.4f}), mean theta "
            f"{theta.mean():.4f} (needs < 0.85), per seed c1 "
            f"{np.round(aux, 4).tolist()}, theta {np.round(theta, 4).tolist()}")


@pytest.fixture(scope="module")
def marsrover():
    env = make_env("marsrover4", slip=0.1, threshold=[0.2])
    out = {}
    for kind in ("psconrl", "cucrl"):
        start = time.perf_counter()
        cfg = ExperimentConfig(env="marsrover4", agent=kind, horizon=MARS_T,
                               n_runs=MARS_SEEDS, base_seed=0, output_dir=None,
                               agent_config=AgentConfig(h=100))
        traces = run(cfg, env)
        out[kind] = (traces, time.perf_counter() - start)
    return env, out


def regret_curves(env, traces):
    ref = reference_solution(env)
    series = [compute_metrics(t, ref, env.model.thresholds) for t in traces]
    return series


def test_criterion_5_marsrover_sublinear(marsrover):
    env, out = marsrover
    traces, elapsed = out["psconrl"]
    series = regret_curves(env, traces)
    regret = np.mean([s.unclipped_regret for s in series], axis=0)
    r0, r1 = regret[MARS_T0 - 1], regret[MARS_T - 1]
    aux = np.mean([s.running_average[1, -1] for s in series])
    ok = r1 <= 1.8 * r0 and aux <= 0.2 + 0.05 and elapsed < 600
    verdict(5, "Marsrover 4x4 sublinear", ok,
            f"regret({MARS_T0})={r0:.2f}, regret({MARS_T})={r1:.2f}, ratio "
            f"{r1 / r0:.3f} (<= 1.8), mean avg c1 {aux:.4f} (<= 0.25), {elapsed:.0f}s (< 600s)")


def test_criterion_6_psconrl_beats_cucrl(marsrover):
    env, out = marsrover
    ps = regret_curves(env, out["psconrl"][0])
    cu = regret_curves(env, out["cucrl"][0])
    ps_r = np.mean([s.unclipped_regret[-1] for s in ps])
    cu_r = np.mean([s.unclipped_regret[-1] for s in cu])
    ps_c = np.mean([s.clipped_regret[-1] for s in ps])
    cu_c = np.mean([s.clipped_regret[-1] for s in cu])
    elapsed = out["psconrl"][1] + out["cucrl"][1]
    verdict(6, "PSConRL vs C-UCRL", ps_r < cu_r and elapsed < 900,
            f"mean regret at T: PSConRL {ps_r:.1f} vs C-UCRL {cu_r:.1f} "
            f"(clipped {ps_c:.1f} vs {cu_c:.1f}), {elapsed:.0f}s (< 900s)")


def test_criterion_7_episode_count_bound(example1, marsrover):
    env, out = marsrover
    checked, bad = 0, []
    toy = make_env("toy")
    for trace in example1[1]["psconrl"]:
        bad += episode_bound_violations(trace, toy.n_states, toy.n_actions).tolist()
        checked += 1
    for trace in out["psconrl"][0]:
        bad += episode_bound_violations(trace, env.n_states, env.n_actions).tolist()
        checked += 1
    verdict(7, "K_T bound", not bad,
            f"{checked} PSConRL traces, {len(bad)} times with K_T > sqrt(2 S A T ln T)")


def test_criterion_8_determinism(example1, tmp_path):
    first, _, _ = example1
    example1_runs(tmp_path)
    names = sorted(p.relative_to(first) for p in first.rglob("trace_*.csv"))
    same = all((first / n).read_bytes() == (tmp_path / n).read_bytes() for n in names)
    verdict(8, "determinism", same and len(names) == 10,
            f"{len(names)} trace CSVs compared byte for byte, identical: {same}")


def test_criterion_9_posterior_laws():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    count_ok, worst = True, 0.0
    for _ in range(10_000):
        S, A = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        alpha0 = float(rng.choice([0.1, 0.5, 1.0, 2.5]))
        post = init_prior(S, A, alpha0)
        n = int(rng.integers(0, 40))
        triples = rng.integers(0, [S, A, S], size=(n, 3))
        for s, a, t in triples:
            post.observe(s, a, t)
        expected = np.zeros((S, A), dtype=np.int64)
        np.add.at(expected, (triples[:, 0], triples[:, 1]), 1)
        count_ok &= np.array_equal(post.visit_counts(), expected)
        p = post.sample(rng)
        worst = max(worst, float(np.abs(p.sum(axis=2) - 1).max()))
    elapsed = time.perf_counter() - start
    verdict(9, "posterior laws", count_ok and worst <= 1e-12 and elapsed < 10,
            f"10^4 cases, counts exact: {count_ok}, max |row sum - 1| = {worst:.1e}, "
            f"{elapsed:.1f}s (< 10s)")
