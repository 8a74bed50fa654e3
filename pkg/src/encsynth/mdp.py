"""Finite MDPs, grid worlds, policies and episode simulation.

State ids are dense integers. Grid cells map to state ids in row-major order,
skipping trap cells; the goal cell keeps its row-major slot and is the only
absorbing state of a grid world.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels

# (d_row, d_col) for each action id; ties are broken towards the lowest id
ACTIONS: tuple[tuple[int, int], ...] = (
    (-1, 0),   # 0 N
    (-1, 1),   # 1 NE
    (0, 1),    # 2 E
    (1, 1),    # 3 SE
    (1, 0),    # 4 S
    (1, -1),   # 5 SW
    (0, -1),   # 6 W
    (-1, -1),  # 7 NW
    (0, 0),    # 8 Stay
)
ACTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW", "Stay")
STAY = 8


class MdpError(ValueError):
    """Raised when an MDP or grid specification violates its invariants."""


class UnreachableGoalError(MdpError):
    def __init__(self, cells):
        self.cells = sorted(cells)
        super().__init__(f"goal unreachable from cells {self.cells}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite MDP with deterministic (``next_state``) or stochastic
    (``transition``) dynamics.

    ``action_mask[x, u]`` marks the valid actions of state ``x``. A discount
    of exactly 1 is the undiscounted setting and requires an absorbing state.
    """

    num_states: int
    num_actions: int
    cost: np.ndarray
    discount: float
    absorbing: frozenset
    action_mask: np.ndarray
    next_state: np.ndarray | None = None
    transition: np.ndarray | None = None

    def __post_init__(self):
        S, U = self.num_states, self.num_actions
        if S < 1 or U < 1:
            raise MdpError("need at least one state and one action")
        cost = np.asarray(self.cost, dtype=float)
        mask = np.asarray(self.action_mask, dtype=bool)
        if cost.shape != (S, U) or mask.shape != (S, U):
            raise MdpError("cost/action_mask must have shape (num_states, num_actions)")
        if not np.all(np.isfinite(cost)):
            raise MdpError("costs must be finite")
        if not 0.0 <= self.discount <= 1.0:
            raise MdpError("discount must lie in [0, 1]")
        if self.discount == 1.0 and not self.absorbing:
            raise MdpError("undiscounted MDP needs at least one absorbing state")
        if not mask.any(axis=1).all():
            raise MdpError("every state needs a valid action")
        if (self.next_state is None) == (self.transition is None):
            raise MdpError("give exactly one of next_state or transition")
        absorbing = frozenset(int(x) for x in self.absorbing)
        if any(not 0 <= x < S for x in absorbing):
            raise MdpError("absorbing state id out of range")
        if self.next_state is not None:
            nxt = np.asarray(self.next_state, dtype=np.int64)
            if nxt.shape != (S, U) or nxt.min() < 0 or nxt.max() >= S:
                raise MdpError("next_state ids out of range")
            for x in absorbing:
                if np.any(nxt[x] != x):
                    raise MdpError(f"absorbing state {x} must self-loop")
            object.__setattr__(self, "next_state", _frozen(nxt))
        else:
            P = np.asarray(self.transition, dtype=float)
            if P.shape != (S, U, S) or P.min() < 0:
                raise MdpError("transition must be a nonnegative (S, U, S) array")
            if np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
                raise MdpError("transition rows must sum to 1")
            for x in absorbing:
                if np.any(P[x, :, x] != 1.0):
                    raise MdpError(f"absorbing state {x} must self-loop")
            object.__setattr__(self, "transition", _frozen(P))
        for x in absorbing:
            if np.any(cost[x] != 0.0):
                raise MdpError(f"absorbing state {x} must have zero cost")
        object.__setattr__(self, "cost", _frozen(cost))
        object.__setattr__(self, "action_mask", _frozen(mask))
        object.__setattr__(self, "absorbing", absorbing)

    @property
    def deterministic(self) -> bool:
        return self.next_state is not None

    @property
    def nonabsorbing(self) -> np.ndarray:
        return np.array([x for x in range(self.num_states) if x not in self.absorbing],
                        dtype=np.int64)

    @property
    def absorbing_mask(self) -> np.ndarray:
        m = np.zeros(self.num_states, dtype=np.uint8)
        m[list(self.absorbing)] = 1
        return m

    def transition_matrix(self) -> np.ndarray:
        """P[x, u, x'] (deterministic rows become unit masses)."""
        if self.transition is not None:
            return self.transition
        P = np.zeros((self.num_states, self.num_actions, self.num_states))
        x, u = np.indices((self.num_states, self.num_actions))
        P[x, u, self.next_state] = 1.0
        return P

    def with_discount(self, discount: float) -> TabularMdp:
        return TabularMdp(self.num_states, self.num_actions, self.cost, discount,
                          self.absorbing, self.action_mask, self.next_state,
                          self.transition)

    @classmethod
    def from_transitions(cls, num_states: int, num_actions: int,
                         moves: dict, absorbing: Iterable[int],
                         discount: float = 1.0) -> TabularMdp:
        """Build a deterministic MDP from ``{(x, u): (x_next, cost)}``.

        Actions not listed are invalid; absorbing states self-loop at zero cost.
        """
        absorbing = frozenset(absorbing)
        nxt = np.tile(np.arange(num_states)[:, None], (1, num_actions))
        cost = np.zeros((num_states, num_actions))
        mask = np.zeros((num_states, num_actions), dtype=bool)
        for (x, u), (xn, c) in moves.items():
            nxt[x, u] = xn
            cost[x, u] = c
            mask[x, u] = True
        for x in absorbing:
            mask[x, :] = True
        return cls(num_states, num_actions, cost, discount, absorbing, mask,
                   next_state=nxt)


@dataclass(frozen=True)
class GridWorldSpec:
    width: int
    height: int
    goal: tuple[int, int]
    traps: frozenset = field(default_factory=frozenset)
    step_cost: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "traps", frozenset(tuple(t) for t in self.traps))
        object.__setattr__(self, "goal", tuple(self.goal))
        if self.width < 1 or self.height < 1:
            raise MdpError("grid must be at least 1x1")
        if self.goal in self.traps:
            raise MdpError("goal cannot be a trap")
        for r, c in self.traps | {self.goal}:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise MdpError(f"cell {(r, c)} out of bounds")
        if not self.step_cost > 0:
            raise MdpError("step_cost must be positive")

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width


@dataclass(frozen=True, eq=False)
class GridWorld:
    """A grid MDP plus its cell <-> state-id mapping."""

    spec: GridWorldSpec
    mdp: TabularMdp
    cells: tuple  # state id -> (row, col)

    @property
    def goal_state(self) -> int:
        return self.state_of(self.spec.goal)

    def state_of(self, cell) -> int:
        return self._index[tuple(cell)]

    @property
    def _index(self) -> dict:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {cell: s for s, cell in enumerate(self.cells)}
            object.__setattr__(self, "_idx", idx)
        return idx


def build_grid_world(spec: GridWorldSpec) -> GridWorld:
    """Construct the grid MDP: 8 moves plus Stay, moves off-grid or into traps
    removed, goal absorbing."""
    cells = tuple((r, c) for r in range(spec.height) for c in range(spec.width)
                  if (r, c) not in spec.traps)
    index = {cell: s for s, cell in enumerate(cells)}
    S, U = len(cells), len(ACTIONS)
    goal = index[spec.goal]
    nxt = np.tile(np.arange(S)[:, None], (1, U))
    cost = np.full((S, U), spec.step_cost)
    mask = np.zeros((S, U), dtype=bool)
    for s, (r, c) in enumerate(cells):
        if s == goal:
            mask[s, STAY] = True
            cost[s, :] = 0.0
            continue
        for u, (dr, dc) in enumerate(ACTIONS):
            cell = (r + dr, c + dc)
            if spec.in_bounds(*cell) and cell not in spec.traps:
                mask[s, u] = True
                nxt[s, u] = index[cell]

    # reverse breadth-first search from the goal over valid moves
    preds = [[] for _ in range(S)]
    for s in range(S):
        for u in np.flatnonzero(mask[s]):
            preds[nxt[s, u]].append(s)
    seen = {goal}
    queue = deque([goal])
    while queue:
        for p in preds[queue.popleft()]:
            if p not in seen:
                seen.add(p)
                queue.append(p)
    if len(seen) < S:
        raise UnreachableGoalError(cells[s] for s in range(S) if s not in seen)

    mdp = TabularMdp(S, U, cost, 1.0, frozenset({goal}), mask, next_state=nxt)
    return GridWorld(spec, mdp, cells)


def parse_maze(text: str, step_cost: float = 0.1) -> GridWorldSpec:
    """Parse the maze text format: ``width height`` then rows of ``.``/``T``/``G``."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise MdpError("empty maze file")
    try:
        width, height = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise MdpError(f"bad maze header {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != height or any(len(row) != width for row in rows):
        raise MdpError(f"maze body must be {height} rows of {width} characters")
    traps, goals = set(), []
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "T":
                traps.add((r, c))
            elif ch == "G":
                goals.append((r, c))
            elif ch != ".":
                raise MdpError(f"unexpected maze character {ch!r} at {(r, c)}")
    if len(goals) != 1:
        raise MdpError("maze must contain exactly one goal")
    return GridWorldSpec(width, height, goals[0], frozenset(traps), step_cost)


def format_maze(spec: GridWorldSpec) -> str:
    out = [f"{spec.width} {spec.height}"]
    for r in range(spec.height):
        row = ""
        for c in range(spec.width):
            row += "G" if (r, c) == spec.goal else "T" if (r, c) in spec.traps else "."
        out.append(row)
    return "\n".join(out) + "\n"


def load_maze(path, step_cost: float = 0.1) -> GridWorldSpec:
    return parse_maze(Path(path).read_text(), step_cost)


DEFAULT_MAZE = Path(__file__).parent / "data" / "maze9x9_v1.txt"


def default_grid(step_cost: float = 0.1) -> GridWorld:
    """The shipped 9x9 experiment maze."""
    return build_grid_world(load_maze(DEFAULT_MAZE, step_cost))


def valid_actions(mdp: TabularMdp, x: int) -> list[int]:
    if not 0 <= x < mdp.num_states:
        raise MdpError(f"state {x} out of range")
    return [int(u) for u in np.flatnonzero(mdp.action_mask[x])]


def uniform_behavior(mdp: TabularMdp) -> np.ndarray:
    """b(u|x) = 1/|valid_actions(x)| on valid actions, 0 elsewhere."""
    mask = mdp.action_mask.astype(float)
    return _frozen(mask / mask.sum(axis=1, keepdims=True))


def check_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise MdpError("policy must have shape (num_states, num_actions)")
    if policy.min() < 0 or np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-12:
        raise MdpError("policy rows must be probability vectors")
    if np.any(policy[~mdp.action_mask] > 0):
        raise MdpError("policy puts mass on invalid actions")
    return policy


def deterministic_policy(mdp: TabularMdp, actions: Sequence[int]) -> np.ndarray:
    """One-hot stochastic table for an action-per-state policy."""
    pi = np.zeros((mdp.num_states, mdp.num_actions))
    for x, u in enumerate(actions):
        if not mdp.action_mask[x, u]:
            raise MdpError(f"action {u} invalid in state {x}")
        pi[x, u] = 1.0
    return pi


def policy_cdf(policy: np.ndarray) -> np.ndarray:
    """Row-wise cumulative table used for inverse-CDF action sampling.

    The cumulative mass is pinned to exactly 1 from the last supported action
    onwards so that any uniform draw in [0, 1) selects a supported action.
    """
    policy = np.asarray(policy, dtype=float)
    cdf = np.cumsum(policy, axis=1)
    for x in range(policy.shape[0]):
        last = np.flatnonzero(policy[x] > 0)[-1]
        cdf[x, last:] = 1.0
    return np.ascontiguousarray(cdf)


class Outcome(Enum):
    ABSORBED = "absorbed"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class Episode:
    start: int
    steps: tuple  # ((state, action, cost), ...)
    outcome: Outcome
    final_state: int

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def total_cost(self) -> float:
        return float(sum(c for _, _, c in self.steps))

    def transitions(self):
        """Yield (x, u, c, x_next) tuples."""
        for t, (x, u, c) in enumerate(self.steps):
            xn = self.steps[t + 1][0] if t + 1 < len(self.steps) else self.final_state
            yield x, u, c, xn

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "state", "action", "cost"])
        for t, (x, u, c) in enumerate(self.steps):
            w.writerow([t, x, u, repr(float(c))])
        return buf.getvalue()


def simulate_episode(mdp: TabularMdp, policy: np.ndarray, x0: int, max_steps: int,
                     rng: np.random.Generator, cdf: np.ndarray | None = None) -> Episode:
    """Roll out ``policy`` from ``x0`` until absorption or ``max_steps``.

    Exactly ``max_steps`` uniforms are drawn from ``rng`` per call regardless of
    the episode length, which keeps seeded streams aligned across consumers.
    """
    if x0 in mdp.absorbing:
        raise MdpError(f"episode cannot start in absorbing state {x0}")
    if not mdp.deterministic:
        raise MdpError("simulate_episode needs deterministic transitions")
    if cdf is None:
        cdf = policy_cdf(check_policy(mdp, policy))
    uniforms = rng.random(max_steps)
    states = np.empty(max_steps, dtype=np.int64)
    actions = np.empty(max_steps, dtype=np.int64)
    n, absorbed = kernels.sample_path(mdp.next_state, cdf, mdp.absorbing_mask,
                                      int(x0), uniforms, states, actions)
    steps = tuple((int(x), int(u), float(mdp.cost[x, u]))
                  for x, u in zip(states[:n], actions[:n]))
    final = int(mdp.next_state[states[n - 1], actions[n - 1]]) if n else int(x0)
    return Episode(int(x0), steps, Outcome.ABSORBED if absorbed else Outcome.TRUNCATED,
                   final)


def spawn_state(mdp: TabularMdp, rng: np.random.Generator) -> int:
    """Uniform draw over non-absorbing states."""
    candidates = mdp.nonabsorbing
    if len(candidates) == 0:
        raise ValueError("every state is absorbing; there is nowhere to spawn")
    return int(candidates[rng.integers(len(candidates))])


def discounted_return(episode: Episode | Sequence[float], gamma: float) -> float:
    """Sum_t gamma^t c_t over the episode's costs."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    costs = [c for _, _, c in episode.steps] if isinstance(episode, Episode) else episode
    total, weight = 0.0, 1.0
    for c in costs:
        total += weight * c
        weight *= gamma
    return total
