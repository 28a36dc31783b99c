"""Seeded simulation runs, regret bookkeeping and CSV persistence."""
from __future__ import annotations

import bisect
import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import (AGENT_KINDS, BRANCHES, AgentAbortError, AgentConfig,
                     make_agent)
from .cmdp import StationaryPolicy
from .envs import EnvInstance, GridError, make_env, parse_header
from .lp import CmdpSolution, solve_constrained

NUM_FORMAT = "%.17g"
_ENV_BLOCK = 4096


class ConfigError(ValueError):
    pass


class InfeasibleEnvError(ValueError):
    """The true model admits no policy meeting every budget."""


class RunAbortedError(RuntimeError):
    def __init__(self, run: int, step: int, cause: Exception):
        self.run, self.step = run, step
        super().__init__(f"run {run} aborted at step {step}: {cause}")


@dataclass
class ExperimentConfig:
    env: str
    agent: str = "psconrl"
    horizon: int = 10_000
    n_runs: int = 1
    base_seed: int = 0
    output_dir: str | None = "results"
    stride: int = 100
    write_traces: bool = True
    agent_config: AgentConfig = field(default_factory=AgentConfig)
    env_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"agent must be one of {AGENT_KINDS}, got {self.agent!r}")
        for name in ("horizon", "n_runs", "stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")


_INT_KEYS = {"horizon", "n_runs", "base_seed", "stride"}
_AGENT_KEYS = {"alpha0": float, "rvi_tol": float, "h": int,
               "bonus_scale": float, "delta": float, "psrl_mode": str}
_ENV_KEYS = {"theta", "tau", "slip"}


def parse_config(text: str, base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines into an ExperimentConfig.

    Relative grid paths and output directories resolve against ``base_dir``.
    """
    try:
        header = parse_header(text.splitlines())
    except GridError as err:
        raise ConfigError(str(err)) from None
    top, agent, env_params, thresholds = {}, {}, {}, {}
    try:
        for key, value in header.items():
            if key in _INT_KEYS:
                top[key] = int(value)
            elif key in ("env", "agent"):
                top[key] = value
            elif key == "output_dir":
                top[key] = value
            elif key == "write_traces":
                top[key] = value.lower() in ("1", "true", "yes")
            elif key in _AGENT_KEYS:
                agent[key] = _AGENT_KEYS[key](value)
            elif key in _ENV_KEYS:
                env_params[key] = float(value)
            elif key == "threshold":
                thresholds[1] = float(value)
            elif key.startswith("threshold[") and key.endswith("]"):
                thresholds[int(key[10:-1])] = float(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"bad config value: {err}") from None
    if "env" not in top:
        raise ConfigError("config needs an 'env' entry")
    if thresholds:
        if sorted(thresholds) != list(range(1, len(thresholds) + 1)):
            raise ConfigError("threshold indices must run 1..m")
        env_params["threshold"] = [thresholds[i] for i in sorted(thresholds)]
    if base_dir is not None:
        base = Path(base_dir)
        candidate = base / top["env"]
        if candidate.exists():
            top["env"] = str(candidate)
        if "output_dir" in top and not Path(top["output_dir"]).is_absolute():
            top["output_dir"] = str(base / top["output_dir"])
    try:
        return ExperimentConfig(agent_config=AgentConfig(**agent),
                                env_params=env_params, **top)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


def build_env(config: ExperimentConfig) -> EnvInstance:
    return make_env(config.env, **config.env_params)


_REFERENCE_CACHE: dict = {}


def _model_key(env: EnvInstance) -> str:
    digest = hashlib.sha1()
    for arr in (env.model.transitions, env.model.costs, env.model.thresholds):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def reference_solution(env: EnvInstance) -> CmdpSolution:
    """Optimal constrained solution of the true model, cached per model."""
    key = _model_key(env)
    if key not in _REFERENCE_CACHE:
        solution = solve_constrained(env.model)
        if solution is None:
            raise InfeasibleEnvError(
                f"{env.name}: infeasible, thresholds {env.model.thresholds.tolist()} "
                "cannot be met by any policy")
        _REFERENCE_CACHE[key] = solution
    return _REFERENCE_CACHE[key]


@dataclass
class Trace:
    """One simulated run. Step arrays are indexed by t - 1 with t = 1..T."""

    env_name: str
    agent: str
    seed: int
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    episodes: np.ndarray
    branches: np.ndarray
    costs: np.ndarray  # (m + 1) x T
    records: list
    final_alpha: np.ndarray

    @property
    def horizon(self) -> int:
        return self.states.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1)

    @property
    def n_episodes(self) -> int:
        return int(self.episodes[-1]) + 1 if self.horizon else 0

    def branch_names(self) -> list:
        return [BRANCHES[b] for b in self.branches]


def _cost_strings(env: EnvInstance) -> list:
    c = env.model.costs
    return [[",".join(NUM_FORMAT % v for v in c[:, s, a])
             for a in range(env.n_actions)] for s in range(env.n_states)]


def trace_header(n_costs: int) -> str:
    cols = ["t", "state", "action", "next_state"]
    cols += [f"c{i}" for i in range(n_costs)] + ["episode", "branch"]
    return ",".join(cols) + "\n"


class TraceWriter:
    """Appends stride blocks of a trace to a CSV file as they complete."""

    def __init__(self, path, env: EnvInstance):
        self.path = Path(path)
        self._costs = _cost_strings(env)
        self._fh = open(self.path, "w", encoding="utf-8", newline="")
        self._fh.write(trace_header(env.model.costs.shape[0]))

    def write_block(self, lo, hi, states, actions, next_states, episodes, branches):
        cs = self._costs
        lines = [f"{t + 1},{s},{a},{n},{cs[s][a]},{e},{BRANCHES[b]}\n"
                 for t, s, a, n, e, b in zip(
                     range(lo, hi), states[lo:hi].tolist(), actions[lo:hi].tolist(),
                     next_states[lo:hi].tolist(), episodes[lo:hi].tolist(),
                     branches[lo:hi].tolist())]
        self._fh.write("".join(lines))
        self._fh.flush()

    def close(self):
        self._fh.close()


def simulate(env: EnvInstance, agent_kind: str, horizon: int, seed: int,
             agent_config: AgentConfig | None = None,
             writer: TraceWriter | None = None, stride: int = 100) -> Trace:
    """Run one agent for ``horizon`` steps.

    The run seed is split into an environment-noise stream and an agent
    stream, so different agents with the same seed see identical env noise.
    """
    agent_config = agent_config or AgentConfig()
    env_seq, agent_seq = np.random.SeedSequence(seed).spawn(2)
    env_rng = np.random.default_rng(env_seq)
    agent = make_agent(agent_kind, env.model, agent_config,
                       np.random.default_rng(agent_seq))

    T = int(horizon)
    states = np.empty(T, dtype=np.int64)
    actions = np.empty(T, dtype=np.int64)
    next_states = np.empty(T, dtype=np.int64)
    episodes = np.empty(T, dtype=np.int64)
    branches = np.empty(T, dtype=np.int8)
    branch_code = {name: i for i, name in enumerate(BRANCHES)}

    cdf = env.cdf
    last_state = env.n_states - 1
    cost_rows = np.ascontiguousarray(env.model.costs.transpose(1, 2, 0))
    needs_costs = agent_kind == "cucrl"
    s = env.initial_state
    plan = True
    noise, pos = [], 0
    lo = 0
    for t in range(T):
        if plan:
            try:
                agent.begin(t + 1)
            except AgentAbortError as err:
                if writer is not None:
                    writer.write_block(lo, t, states, actions, next_states,
                                       episodes, branches)
                raise RunAbortedError(-1, t + 1, err) from err
            plan = False
        a = agent.act(s)
        if pos == len(noise):
            noise, pos = env_rng.random(_ENV_BLOCK).tolist(), 0
        s_next = bisect.bisect_right(cdf[s][a], noise[pos])
        pos += 1
        if s_next > last_state:
            s_next = last_state
        states[t] = s
        actions[t] = a
        next_states[t] = s_next
        episodes[t] = agent.es.index
        branches[t] = branch_code[agent.es.branch]
        plan = agent.observe(s, a, s_next, cost_rows[s, a] if needs_costs else None)
        s = s_next
        if writer is not None and (t + 1) % stride == 0:
            writer.write_block(lo, t + 1, states, actions, next_states,
                               episodes, branches)
            lo = t + 1
    if writer is not None and lo < T:
        writer.write_block(lo, T, states, actions, next_states, episodes, branches)

    costs = env.model.costs[:, states, actions]
    return Trace(env.name, agent_kind, seed, states, actions, next_states,
                 episodes, branches, costs, list(agent.records),
                 agent.posterior.alpha.copy())


@dataclass
class MetricsSeries:
    """Cumulative regret/violation curves of one run, indexed by t - 1."""

    times: np.ndarray
    clipped_regret: np.ndarray
    unclipped_regret: np.ndarray
    clipped_violation: np.ndarray  # m x T
    unclipped_violation: np.ndarray  # m x T
    running_average: np.ndarray  # (m + 1) x T
    reference_value: float
    reference_policy: StationaryPolicy | None = None

    def check(self) -> None:
        """Raise AssertionError if monotonicity or dominance fails."""
        for clipped, raw in ((self.clipped_regret, self.unclipped_regret),
                             (self.clipped_violation, self.unclipped_violation)):
            assert np.all(np.diff(clipped, axis=-1) >= 0), "clipped series decreased"
            assert np.all(clipped >= raw - 1e-9 * np.maximum(1, np.abs(raw))), \
                "clipped below unclipped"

    def columns(self) -> list:
        m = self.clipped_violation.shape[0]
        return (["t", "clipped_regret_c0", "unclipped_regret_c0"]
                + [f"clipped_viol_c{i}" for i in range(1, m + 1)]
                + [f"unclipped_viol_c{i}" for i in range(1, m + 1)]
                + [f"avg_c{i}" for i in range(m + 1)])

    def table(self, stride: int = 1) -> np.ndarray:
        T = self.times.size
        idx = np.arange(stride - 1, T, stride)
        if idx.size == 0 or idx[-1] != T - 1:
            idx = np.append(idx, T - 1)
        return np.column_stack([self.times[idx], self.clipped_regret[idx],
                                self.unclipped_regret[idx],
                                self.clipped_violation[:, idx].T,
                                self.unclipped_violation[:, idx].T,
                                self.running_average[:, idx].T])


def compute_metrics(trace: Trace, reference: CmdpSolution | float,
                    thresholds) -> MetricsSeries:
    if isinstance(reference, CmdpSolution):
        value, policy = reference.objective_value, reference.policy
    else:
        value, policy = float(reference), None
    costs = np.asarray(trace.costs, dtype=float)
    tau = np.asarray(thresholds, dtype=float).reshape(-1, 1)
    gap = costs[0] - value
    excess = costs[1:] - tau
    t = np.arange(1, costs.shape[1] + 1)
    return MetricsSeries(t, np.cumsum(np.maximum(gap, 0.0)), np.cumsum(gap),
                         np.cumsum(np.maximum(excess, 0.0), axis=1),
                         np.cumsum(excess, axis=1),
                         np.cumsum(costs, axis=1) / t, value, policy)


def write_table(path, columns, table) -> None:
    np.savetxt(path, table, fmt=NUM_FORMAT, delimiter=",",
               header=",".join(columns), comments="")


def read_table(path):
    with open(path, encoding="utf-8") as fh:
        columns = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return columns, table


def aggregate_tables(paths, out_path) -> np.ndarray:
    """Column-wise arithmetic mean of per-run metric CSVs."""
    columns, first = read_table(paths[0])
    tables = [first] + [read_table(p)[1] for p in paths[1:]]
    if any(t.shape != first.shape for t in tables):
        raise ValueError("per-run metric tables have different shapes")
    mean = np.mean(tables, axis=0)
    write_table(out_path, columns, mean)
    return mean


def write_episodes(path, records: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("episode,start,branch,value\n")
        fh.writelines(f"{r.index},{r.start},{r.branch},{NUM_FORMAT % r.value}\n"
                      for r in records)


def episode_bound_violations(trace: Trace, n_states: int, n_actions: int) -> np.ndarray:
    """Times t >= 2 where the episode count exceeds sqrt(2 S A t ln t)."""
    t = trace.times
    K = trace.episodes + 1
    mask = t >= 2
    bound = np.sqrt(2.0 * n_states * n_actions * t[mask] * np.log(t[mask]))
    return t[mask][K[mask] > bound]


def run_paths(output_dir, agent: str, run: int) -> dict:
    out = Path(output_dir)
    stem = f"{agent}_run{run:03d}"
    return {"trace": out / f"trace_{stem}.csv", "metrics": out / f"metrics_{stem}.csv",
            "episodes": out / f"episodes_{stem}.csv"}


def run(config: ExperimentConfig, env: EnvInstance | None = None) -> list:
    """Simulate ``n_runs`` seeds (base_seed + j) and persist their CSVs."""
    env = env or build_env(config)
    reference = reference_solution(env)
    out = None if config.output_dir is None else Path(config.output_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    traces, metric_files = [], []
    for j in range(config.n_runs):
        seed = config.base_seed + j
        paths = run_paths(out, config.agent, j) if out is not None else None
        writer = (TraceWriter(paths["trace"], env)
                  if paths is not None and config.write_traces else None)
        try:
            trace = simulate(env, config.agent, config.horizon, seed,
                             config.agent_config, writer, config.stride)
        except RunAbortedError as err:
            raise RunAbortedError(j, err.step, err.__cause__) from err.__cause__
        finally:
            if writer is not None:
                writer.close()
        traces.append(trace)
        if paths is not None:
            metrics = compute_metrics(trace, reference, env.model.thresholds)
            write_table(paths["metrics"], metrics.columns(), metrics.table(config.stride))
            write_episodes(paths["episodes"], trace.records)
            metric_files.append(paths["metrics"])
    if metric_files:
        aggregate_tables(metric_files, out / f"metrics_{config.agent}_mean.csv")
    return traces


def sweep(config: ExperimentConfig, agents) -> dict:
    """Run several agents on the same seeds (paired env noise)."""
    env = build_env(config)
    return {kind: run(replace(config, agent=kind), env) for kind in agents}


def episode_length_ok(trace: Trace) -> bool:
    """Every episode is at most one step longer than its predecessor."""
    lengths = np.bincount(trace.episodes)
    return bool(np.all(lengths[1:] <= lengths[:-1] + 1)) and lengths[0] <= 1


def posterior_mean(trace: Trace) -> np.ndarray:
    alpha = trace.final_alpha
    return alpha / alpha.sum(axis=2, keepdims=True)
