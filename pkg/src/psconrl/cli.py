"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 infeasible or invalid input.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .agents import AGENT_KINDS, AgentAbortError
from .cmdp import validate_cmdp
from .envs import ACTIONS, GridError, compile_grid, load_grid, make_env
from .harness import (ConfigError, InfeasibleEnvError, RunAbortedError,
                      load_config, run, sweep)
from .lp import FEAS_TOL, SolverStallError, solve_constrained
from .planning import NonCommunicatingError

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_args(p):
    p.add_argument("model", help="'toy' (alias 'example1'), a shipped grid name or a .grid path")
    p.add_argument("--theta", type=float, help="toy success probability")
    p.add_argument("--tau", type=float, help="toy budget")
    p.add_argument("--slip", type=float, help="grid slip probability")
    p.add_argument("--threshold", type=float, action="append",
                   help="budget override, repeat once per constraint")


def _make(args):
    params = {k: getattr(args, k) for k in ("theta", "tau", "slip", "threshold")
              if getattr(args, k) is not None}
    return make_env(args.model, **params)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psconrl",
                     description="Constrained average-cost RL experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    _env_args(sub.add_parser("solve", help="optimal constrained policy of the true model"))
    _env_args(sub.add_parser("diameter", help="diameter of the model"))
    p = sub.add_parser("validate", help="parse and compile a grid file")
    p.add_argument("grid")
    p = sub.add_parser("run", help="simulate one agent as configured")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p = sub.add_parser("sweep", help="simulate several agents on shared seeds")
    p.add_argument("config")
    p.add_argument("--agents", required=True,
                   help=f"comma separated subset of {','.join(AGENT_KINDS)}")
    p.add_argument("--output-dir")
    return parser


def _action_names(env) -> tuple:
    if env.n_actions == len(ACTIONS) and "kind" in env.meta:
        return ACTIONS
    return tuple(f"a{i}" for i in range(env.n_actions))


def cmd_solve(args, out) -> int:
    env = _make(args)
    solution = solve_constrained(env.model)
    if solution is None:
        print(f"{env.name}: infeasible for thresholds "
              f"{env.model.thresholds.tolist()}", file=sys.stderr)
        return EXIT_INVALID
    names = _action_names(env)
    print(f"optimal loss: {solution.objective_value:.10g}", file=out)
    for i, (value, tau) in enumerate(zip(solution.constraint_values,
                                         env.model.thresholds), 1):
        state = "binding" if value >= tau - 1e-6 else "slack"
        print(f"constraint c{i}: {value:.10g} <= {tau:.10g} ({state})", file=out)
    print("policy:", file=out)
    for s, row in enumerate(solution.policy.probs):
        if solution.occupancy.mu[s].sum() <= FEAS_TOL:
            continue
        acts = " ".join(f"{n}={p:.4f}" for n, p in zip(names, row) if p > 0)
        print(f"  {s} {env.labels[s]}: {acts}", file=out)
    return EXIT_OK


def cmd_diameter(args, out) -> int:
    env = _make(args)
    print(f"{env.name}: states={env.n_states} diameter={env.diameter:.10g}", file=out)
    return EXIT_OK


def cmd_validate(args, out) -> int:
    env = compile_grid(load_grid(args.grid))
    report = validate_cmdp(env.model)
    if not report.ok:
        print(str(report), file=sys.stderr)
        return EXIT_INVALID
    walls = sum(ch == "#" for row in load_grid(args.grid).rows for ch in row)
    print(f"{env.name}: ok, states={env.n_states} actions={env.n_actions} "
          f"constraints={env.model.n_constraints} wall_cells={walls}", file=out)
    return EXIT_OK


def _config(args):
    config = load_config(args.config)
    if args.output_dir:
        config.output_dir = args.output_dir
    return config


def cmd_run(args, out) -> int:
    config = _config(args)
    traces = run(config)
    print(f"{config.agent}: {len(traces)} runs of {config.horizon} steps "
          f"written to {config.output_dir}", file=out)
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    agents = [a.strip() for a in args.agents.split(",") if a.strip()]
    unknown = set(agents) - set(AGENT_KINDS)
    if not agents or unknown:
        raise UsageError(f"--agents must name agents from {AGENT_KINDS}")
    config = _config(args)
    results = sweep(config, agents)
    for kind, traces in results.items():
        final = np.mean([t.costs.mean(axis=1) for t in traces], axis=0)
        print(f"{kind}: mean average costs {np.round(final, 4).tolist()}", file=out)
    print(f"written to {config.output_dir}", file=out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "diameter": cmd_diameter, "validate": cmd_validate,
            "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (GridError, ConfigError, InfeasibleEnvError, NonCommunicatingError,
            FileNotFoundError, ValueError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (RunAbortedError, AgentAbortError, SolverStallError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
