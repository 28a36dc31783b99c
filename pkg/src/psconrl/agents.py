"""Learning agents with a shared act/observe interface.

All agents plan at boundaries (episodes or epochs) and act from a fixed
stationary policy in between. Actions are drawn by inverse-CDF lookup from a
block of pre-drawn uniforms so that the per-step cost stays small.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, StationaryPolicy
from .lp import solve_constrained, solve_unconstrained
from .planning import NonConvergenceError, shortest_path_solution
from .posterior import DirichletPosterior, init_prior

LP_FEASIBLE = "lp_feasible"
EXPLORATION = "exploration"
UNCONSTRAINED = "unconstrained"
RANDOM = "random"
BRANCHES = (LP_FEASIBLE, EXPLORATION, UNCONSTRAINED, RANDOM)

AGENT_KINDS = ("psconrl", "psrlcmdp", "cucrl")
PSRL_MODES = ("episodic", "per_step")

_UNIFORM_BLOCK = 4096


class AgentAbortError(RuntimeError):
    """Planning failed twice in a row on posterior samples."""


@dataclass
class AgentConfig:
    alpha0: float = 0.1
    rvi_tol: float | None = None
    h: int = 100
    bonus_scale: float = 1.0
    delta: float = 0.05
    psrl_mode: str = "per_step"

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if int(self.h) < 1:
            raise ValueError(f"epoch unit h must be >= 1, got {self.h}")
        if self.psrl_mode not in PSRL_MODES:
            raise ValueError(f"psrl_mode must be one of {PSRL_MODES}")
        self.h = int(self.h)


@dataclass
class EpisodeState:
    """Episode bookkeeping for the doubling schedule.

    ``counts`` is N_t(s, a) and ``start_counts`` is N_{t_k}(s, a). ``length``
    counts the steps already taken in the current episode.
    """

    n_states: int
    n_actions: int
    index: int = -1
    start: int = 0
    prev_len: int = 0
    length: int = 0
    counts: np.ndarray = None
    start_counts: np.ndarray = None
    policy: StationaryPolicy | None = None
    branch: str | None = None

    def __post_init__(self):
        shape = (self.n_states, self.n_actions)
        if self.counts is None:
            self.counts = np.zeros(shape, dtype=np.int64)
        if self.start_counts is None:
            self.start_counts = np.zeros(shape, dtype=np.int64)

    def open_episode(self, t: int) -> None:
        if self.index >= 0:
            self.prev_len = self.length
        self.index += 1
        self.start = t
        self.length = 0
        self.start_counts = self.counts.copy()


@dataclass(frozen=True)
class EpisodeRecord:
    start: int
    index: int
    branch: str
    value: float  # LP objective, or the exploration target index


def psconrl_should_stop(es: EpisodeState, t: int) -> bool:
    """Doubling test after the step at time ``t`` (t >= t_k) has been counted.

    The episode ends once its length exceeds the previous one, or once some
    pair reaches max(1, 2 N_{t_k}(s, a)) visits.
    """
    if t < es.start:
        raise ValueError("t precedes the episode start")
    if t - es.start + 1 > es.prev_len:
        return True
    return bool(np.any(es.counts >= np.maximum(1, 2 * es.start_counts)))


def min_visit_state(counts: np.ndarray) -> int:
    """argmin_s sum_a N(s, a); ties go to the lowest index."""
    return int(np.argmin(np.asarray(counts).sum(axis=1)))


def _plan_or_fallback(posterior, costs, thresholds, counts, rng, fallback, rvi_tol):
    """Sample a model, try the constrained LP, otherwise call ``fallback``."""
    for attempt in range(2):
        p = posterior.sample(rng)
        model = Cmdp(p, costs, thresholds)
        solution = solve_constrained(model)
        if solution is not None:
            return solution.policy, LP_FEASIBLE, solution.objective_value
        try:
            return fallback(model, counts, rvi_tol)
        except NonConvergenceError as err:
            last = err
    raise AgentAbortError(f"planning failed on two consecutive samples: {last}")


def _explore(model, counts, rvi_tol):
    target = min_visit_state(counts)
    solution = shortest_path_solution(model.transitions, target, rvi_tol)
    return solution.greedy_policy, EXPLORATION, float(target)


def _ignore_constraints(model, counts, rvi_tol):
    solution = solve_unconstrained(model, 0)
    return solution.policy, UNCONSTRAINED, solution.objective_value


def psconrl_begin_episode(posterior: DirichletPosterior, costs, thresholds,
                          counts, es: EpisodeState | None, rng,
                          rvi_tol: float | None = None):
    """Plan for a new episode; returns (policy, branch, value)."""
    return _plan_or_fallback(posterior, costs, thresholds, counts, rng,
                             _explore, rvi_tol)


def psrlcmdp_begin_episode(posterior: DirichletPosterior, costs, thresholds,
                           es: EpisodeState | None, rng,
                           rvi_tol: float | None = None):
    return _plan_or_fallback(posterior, costs, thresholds, None, rng,
                             _ignore_constraints, rvi_tol)


@dataclass(frozen=True)
class EpochPlan:
    """C-UCRL epoch: ``random_steps`` uniform steps then ``policy``."""

    index: int
    length: int
    random_steps: int
    policy: StationaryPolicy | None
    branch: str
    objective: float = float("nan")


def optimistic_costs(mean_costs, visit_counts, k: int, delta: float = 0.05,
                     bonus_scale: float = 1.0) -> np.ndarray:
    """Lower the main cost and raise the budgeted ones by the confidence bonus."""
    mean_costs = np.asarray(mean_costs, dtype=float)
    _, S, A = mean_costs.shape
    n = np.maximum(1, np.asarray(visit_counts))
    bonus = np.minimum(1.0, bonus_scale * np.sqrt(math.log(2 * S * A * k / delta) / n))
    out = np.minimum(1.0, mean_costs + bonus)
    out[0] = np.maximum(0.0, mean_costs[0] - bonus)
    return out


def cucrl_begin_epoch(mean_transitions, mean_costs, visit_counts, thresholds,
                      k: int, h: int, delta: float = 0.05,
                      bonus_scale: float = 1.0) -> EpochPlan:
    if k < 1:
        raise ValueError("epoch index starts at 1")
    length = k * h
    if k == 1:
        return EpochPlan(k, length, length, None, RANDOM)
    costs = optimistic_costs(mean_costs, visit_counts, k, delta, bonus_scale)
    solution = solve_constrained(Cmdp(mean_transitions, costs, thresholds))
    if solution is None:
        return EpochPlan(k, length, length, None, RANDOM)
    return EpochPlan(k, length, h, solution.policy, LP_FEASIBLE,
                     solution.objective_value)


def _policy_cdf(policy: StationaryPolicy) -> list:
    probs = policy.probs
    n_actions = probs.shape[1]
    cdf = np.cumsum(probs, axis=1)
    last = n_actions - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    cdf[np.arange(n_actions) >= last[:, None]] = 1.0
    return cdf.tolist()


class Agent:
    """Common act/observe machinery.

    ``observe`` returns True when the step closes the current planning period;
    the harness then calls ``begin(t)`` before the next action.
    """

    kind = "agent"

    def __init__(self, model: Cmdp, config: AgentConfig, rng: np.random.Generator):
        self.costs = model.costs
        self.thresholds = model.thresholds
        self.n_states = model.n_states
        self.n_actions = model.n_actions
        self.config = config
        belief, action = rng.spawn(2)
        self.belief_rng = belief
        self.action_rng = action
        self.posterior = init_prior(self.n_states, self.n_actions, config.alpha0)
        self.es = EpisodeState(self.n_states, self.n_actions)
        self.records: list[EpisodeRecord] = []
        self._counts = [[0] * self.n_actions for _ in range(self.n_states)]
        self._cdf = None
        self._uniforms = []
        self._pos = 0

    @property
    def branch(self) -> str:
        return self.es.branch

    @property
    def episode(self) -> int:
        return self.es.index

    def _uniform(self) -> float:
        if self._pos == len(self._uniforms):
            self._uniforms = self.action_rng.random(_UNIFORM_BLOCK).tolist()
            self._pos = 0
        u = self._uniforms[self._pos]
        self._pos += 1
        return u

    def _set_policy(self, policy, branch, value, t):
        self.es.policy = policy
        self.es.branch = branch
        self._cdf = None if policy is None else _policy_cdf(policy)
        self.records.append(EpisodeRecord(t, self.es.index, branch, float(value)))

    def act(self, s: int) -> int:
        row = self._cdf[s]
        return min(bisect.bisect_right(row, self._uniform()), self.n_actions - 1)

    def _count(self, s, a, s_next):
        self.posterior.alpha[s, a, s_next] += 1.0
        row = self._counts[s]
        row[a] += 1
        self.es.counts[s, a] += 1
        self.es.length += 1
        return row[a]


class PSConRLAgent(Agent):
    kind = "psconrl"
    fallback = staticmethod(_explore)

    def __init__(self, model, config, rng):
        super().__init__(model, config, rng)
        self._limit = None

    def begin(self, t: int) -> None:
        es = self.es
        es.open_episode(t)
        policy, branch, value = _plan_or_fallback(
            self.posterior, self.costs, self.thresholds, es.start_counts,
            self.belief_rng, self.fallback, self.config.rvi_tol)
        self._limit = np.maximum(1, 2 * es.start_counts).tolist()
        self._set_policy(policy, branch, value, t)

    def observe(self, s, a, s_next, costs=None) -> bool:
        n = self._count(s, a, s_next)
        return n >= self._limit[s][a] or self.es.length > self.es.prev_len


class PSRLCMDPAgent(PSConRLAgent):
    """Plans like PSConRL but drops the budgets when the sample is infeasible."""

    kind = "psrlcmdp"
    fallback = staticmethod(_ignore_constraints)

    def observe(self, s, a, s_next, costs=None) -> bool:
        stop = super().observe(s, a, s_next, costs)
        return stop or self.config.psrl_mode == "per_step"


class CUCRLAgent(Agent):
    """Epoch-based optimistic LP planner on empirical estimates."""

    kind = "cucrl"

    def __init__(self, model, config, rng):
        super().__init__(model, config, rng)
        self.cost_sums = np.zeros(model.costs.shape)
        self.plan: EpochPlan | None = None
        self._random_left = 0
        self._left = 0

    def mean_costs(self) -> np.ndarray:
        n = np.maximum(1, self.es.counts)
        return self.cost_sums / n

    def begin(self, t: int) -> None:
        es = self.es
        es.open_episode(t)
        cfg = self.config
        plan = cucrl_begin_epoch(self.posterior.mean(), self.mean_costs(),
                                 es.start_counts, self.thresholds, es.index + 1,
                                 cfg.h, cfg.delta, cfg.bonus_scale)
        self.plan = plan
        self._random_left = plan.random_steps
        self._left = plan.length
        self.es.branch = RANDOM
        self._cdf = None
        self.records.append(EpisodeRecord(t, es.index, plan.branch, plan.objective))

    def act(self, s: int) -> int:
        if self._random_left > 0:
            return min(int(self._uniform() * self.n_actions), self.n_actions - 1)
        return super().act(s)

    def observe(self, s, a, s_next, costs) -> bool:
        self._count(s, a, s_next)
        self.cost_sums[:, s, a] += costs
        self._left -= 1
        if self._random_left > 0:
            self._random_left -= 1
            if self._random_left == 0 and self.plan.policy is not None:
                self.es.branch = self.plan.branch
                self._cdf = _policy_cdf(self.plan.policy)
        return self._left == 0


def make_agent(kind: str, model: Cmdp, config: AgentConfig,
               rng: np.random.Generator) -> Agent:
    classes = {"psconrl": PSConRLAgent, "psrlcmdp": PSRLCMDPAgent,
               "cucrl": CUCRLAgent}
    if kind not in classes:
        raise ValueError(f"unknown agent {kind!r}; choose from {AGENT_KINDS}")
    return classes[kind](model, config, rng)
