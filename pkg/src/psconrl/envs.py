"""Benchmark CMDPs: the two-state counterexample and gridworlds.

Grid files are UTF-8 text: ``key = value`` header lines (``kind``, ``slip``,
``threshold`` or ``threshold[i]``, optional ``name``), a blank line, then the
grid. Legend: ``#`` wall, ``.`` free, ``S`` start, ``G`` goal, ``R`` risky,
``B`` box.
"""
from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .cmdp import Cmdp, validate_cmdp
from .planning import can_reach, diameter, is_communicating

ACTIONS = ("up", "down", "right", "left")
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))
PERPENDICULAR = ((3, 2), (3, 2), (0, 1), (0, 1))
LEGEND = set("#.SGRB")
DEFAULT_SLIP = 0.1
BUILTIN_GRIDS = ("marsrover4", "marsrover8", "box")


class GridError(ValueError):
    """Malformed grid text or a grid that cannot be compiled."""


@dataclass(frozen=True)
class GridSpec:
    rows: tuple
    slip: float = DEFAULT_SLIP
    thresholds: tuple = ()
    kind: str | None = None
    name: str | None = None

    @property
    def shape(self) -> tuple:
        return len(self.rows), len(self.rows[0])

    def cells(self, char: str) -> list:
        return [(r, c) for r, row in enumerate(self.rows)
                for c, ch in enumerate(row) if ch == char]

    def free_cells(self) -> list:
        return [(r, c) for r, row in enumerate(self.rows)
                for c, ch in enumerate(row) if ch != "#"]

    def is_wall(self, cell) -> bool:
        r, c = cell
        return self.rows[r][c] == "#"


@dataclass(frozen=True)
class EnvInstance:
    model: Cmdp
    initial_state: int
    labels: tuple
    name: str
    meta: dict = field(default_factory=dict, compare=False)

    @cached_property
    def diameter(self) -> float:
        return diameter(self.model.transitions)

    @cached_property
    def cdf(self) -> list:
        """Per-(s, a) cumulative transition rows as Python lists."""
        out = []
        for rows in self.model.transitions:
            out.append([])
            for row in rows:
                cdf = np.cumsum(row)
                cdf[np.flatnonzero(row)[-1]:] = 1.0
                out[-1].append(cdf.tolist())
        return out

    @property
    def n_states(self) -> int:
        return self.model.n_states

    @property
    def n_actions(self) -> int:
        return self.model.n_actions


def _finish(model: Cmdp, initial_state: int, labels, name: str, **meta) -> EnvInstance:
    report = validate_cmdp(model)
    if not report.ok:
        raise GridError(f"compiled model for {name} is invalid:\n{report}")
    if not is_communicating(model.transitions):
        raise GridError(f"{name} is not communicating")
    return EnvInstance(model, initial_state, tuple(labels), name, meta)


def toy_counterexample(theta: float = 0.9, tau: float = 0.5275) -> EnvInstance:
    """Two states, two actions; a1 leaves s0 w.p. theta, a0 stays, s1 resets.

    Main cost is 1 in s1 (reward 1 in s0), auxiliary cost is 1 in s0.
    """
    if not 0 < theta <= 1:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    if not 0 <= tau <= 1:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = 1.0
    p[0, 1, 1] = theta
    p[0, 1, 0] = 1.0 - theta
    p[1, :, 0] = 1.0
    costs = np.zeros((2, 2, 2))
    costs[0, 1, :] = 1.0
    costs[1, 0, :] = 1.0
    return _finish(Cmdp(p, costs, [tau]), 0, ("s0", "s1"), "toy",
                   theta=theta, tau=tau)


def parse_header(lines) -> dict:
    header = {}
    for n, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith(";"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise GridError(f"line {n}: expected 'key = value', got {line!r}")
        header[key.strip()] = value.strip()
    return header


def _thresholds(header: dict) -> tuple:
    found = {}
    for key, value in header.items():
        if key == "threshold":
            found[1] = float(value)
        elif key.startswith("threshold[") and key.endswith("]"):
            found[int(key[10:-1])] = float(value)
    if sorted(found) != list(range(1, len(found) + 1)):
        raise GridError(f"threshold indices must run 1..m, got {sorted(found)}")
    return tuple(found[i] for i in sorted(found))


def parse_grid(text: str) -> GridSpec:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    header = {}
    if lines and "=" in lines[0]:
        split = lines.index("") if "" in lines else len(lines)
        header = parse_header(lines[:split])
        lines = lines[split + 1:]
    while lines and not lines[0].strip():
        lines.pop(0)
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise GridError("empty grid")
    width = len(lines[0])
    for r, row in enumerate(lines):
        if len(row) != width:
            raise GridError(f"row {r}: ragged row of length {len(row)}, expected {width}")
        for c, ch in enumerate(row):
            if ch not in LEGEND:
                raise GridError(f"row {r}, col {c}: unknown character {ch!r}")
    for r, row in enumerate(lines):
        for c, ch in enumerate(row):
            border = r in (0, len(lines) - 1) or c in (0, width - 1)
            if border and ch != "#":
                raise GridError(f"row {r}, col {c}: grid border must be '#'")
    for ch, lo, hi in (("S", 1, 1), ("G", 1, 1), ("B", 0, 1)):
        found = [(r, c) for r, row in enumerate(lines)
                 for c, x in enumerate(row) if x == ch]
        if not lo <= len(found) <= hi:
            where = ", ".join(f"row {r}, col {c}" for r, c in found) or "nowhere"
            raise GridError(f"expected {lo}..{hi} '{ch}' cells, found {len(found)} ({where})")
    slip = float(header.get("slip", DEFAULT_SLIP))
    if not 0 <= slip < 1:
        raise GridError(f"slip must be in [0, 1), got {slip}")
    return GridSpec(tuple(lines), slip, _thresholds(header),
                    header.get("kind"), header.get("name"))


def load_grid(source) -> GridSpec:
    """Parse a grid file path or one of the shipped grid names."""
    path = Path(source)
    builtin = path.stem if path.suffix == ".grid" and path.name == str(source) else str(source)
    if builtin in BUILTIN_GRIDS and not path.is_file():
        text = resources.files("psconrl.grids").joinpath(f"{builtin}.grid").read_text("utf-8")
        name = builtin
    else:
        text = Path(source).read_text(encoding="utf-8")
        name = Path(source).stem
    spec = parse_grid(text)
    if spec.name is None:
        spec = GridSpec(spec.rows, spec.slip, spec.thresholds, spec.kind, name)
    return spec


def _move(spec: GridSpec, cell, direction):
    dr, dc = MOVES[direction]
    nxt = (cell[0] + dr, cell[1] + dc)
    return cell if spec.is_wall(nxt) else nxt


def _slips(action: int, slip: float):
    out = [(action, 1.0 - slip)]
    if slip > 0:
        out += [(d, slip / 2) for d in PERPENDICULAR[action]]
    return out


def compile_marsrover(spec: GridSpec) -> EnvInstance:
    """States are non-wall cells; the goal sends every action back to start."""
    if spec.cells("B"):
        raise GridError("Marsrover grids cannot contain a box ('B')")
    if spec.kind not in (None, "marsrover"):
        raise GridError(f"grid kind is {spec.kind!r}, not 'marsrover'")
    cells = spec.free_cells()
    index = {cell: i for i, cell in enumerate(cells)}
    start, goal = index[spec.cells("S")[0]], index[spec.cells("G")[0]]
    S, A = len(cells), len(ACTIONS)
    p = np.zeros((S, A, S))
    costs = np.zeros((1 + len(spec.thresholds), S, A))
    for i, cell in enumerate(cells):
        if i == goal:
            p[i, :, start] = 1.0
            continue
        costs[0, i] = 1.0
        if spec.rows[cell[0]][cell[1]] == "R" and len(spec.thresholds):
            costs[1, i] = 1.0
        for a in range(A):
            for d, prob in _slips(a, spec.slip):
                p[i, a, index[_move(spec, cell, d)]] += prob
    if not can_reach(p, goal)[start]:
        raise GridError("goal is unreachable from the start cell")
    return _finish(Cmdp(p, costs, spec.thresholds), start, cells,
                   spec.name or "marsrover", kind="marsrover", slip=spec.slip)


def _wall_neighbours(spec: GridSpec, cell) -> int:
    return sum(spec.is_wall((cell[0] + dr, cell[1] + dc)) for dr, dc in MOVES)


def _push(spec: GridSpec, agent, box, goal, direction):
    dr, dc = MOVES[direction]
    nxt = (agent[0] + dr, agent[1] + dc)
    if spec.is_wall(nxt):
        return agent, box
    if nxt != box:
        return nxt, box
    pushed = (box[0] + dr, box[1] + dc)
    if spec.is_wall(pushed) or pushed == goal:
        return agent, box
    return nxt, pushed


def compile_box(spec: GridSpec) -> EnvInstance:
    """States are (agent cell, box cell) pairs reachable from the start layout.

    The box cannot be pushed onto the goal cell; reaching the goal restores
    both the agent and the box to their initial cells.
    """
    if len(spec.cells("B")) != 1:
        raise GridError("Box grids need exactly one 'B'")
    if spec.kind not in (None, "box"):
        raise GridError(f"grid kind is {spec.kind!r}, not 'box'")
    agent0, box0, goal = spec.cells("S")[0], spec.cells("B")[0], spec.cells("G")[0]
    init = (agent0, box0)
    seen = {init}
    queue = deque([init])
    while queue:
        agent, box = queue.popleft()
        if agent == goal:
            continue
        for d in range(len(MOVES)):
            nxt = _push(spec, agent, box, goal, d)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    free = {cell: i for i, cell in enumerate(spec.free_cells())}
    states = sorted(seen, key=lambda st: (free[st[0]], free[st[1]]))
    index = {st: i for i, st in enumerate(states)}
    S, A = len(states), len(ACTIONS)
    start = index[init]
    p = np.zeros((S, A, S))
    costs = np.zeros((1 + len(spec.thresholds), S, A))
    for i, (agent, box) in enumerate(states):
        if len(spec.thresholds) and _wall_neighbours(spec, box) >= 2:
            costs[1, i] = 1.0
        if agent == goal:
            p[i, :, start] = 1.0
            continue
        costs[0, i] = 1.0
        for a in range(A):
            for d, prob in _slips(a, spec.slip):
                p[i, a, index[_push(spec, agent, box, goal, d)]] += prob
    return _finish(Cmdp(p, costs, spec.thresholds), start, states,
                   spec.name or "box", kind="box", slip=spec.slip)


def compile_grid(spec: GridSpec) -> EnvInstance:
    if spec.kind == "box" or (spec.kind is None and spec.cells("B")):
        return compile_box(spec)
    return compile_marsrover(spec)


def make_env(name: str, **params) -> EnvInstance:
    """Build ``toy`` or a grid (shipped name or file path).

    Recognised params: ``theta``/``tau`` for the toy, ``slip`` and
    ``threshold`` overrides for grids.
    """
    if name in ("toy", "example1"):
        return toy_counterexample(float(params.get("theta", 0.9)),
                                  float(params.get("tau", 0.5275)))
    spec = load_grid(name)
    slip = params.get("slip")
    thresholds = params.get("threshold")
    if slip is not None or thresholds is not None:
        if thresholds is not None:
            thresholds = tuple(np.atleast_1d(np.asarray(thresholds, dtype=float)))
        spec = GridSpec(spec.rows, spec.slip if slip is None else float(slip),
                        spec.thresholds if thresholds is None else thresholds,
                        spec.kind, spec.name)
    return compile_grid(spec)


def env_step(env: EnvInstance, s: int, a: int, rng: np.random.Generator):
    """Sample the successor of (s, a) and return it with the cost vector."""
    row = env.cdf[s][a]
    s_next = min(bisect.bisect_right(row, rng.random()), env.n_states - 1)
    return s_next, env.model.costs[:, s, a].copy()
