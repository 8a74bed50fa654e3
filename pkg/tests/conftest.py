"""Shared builders for the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from encsynth.mdp import (GridWorldSpec, MdpError, TabularMdp, build_grid_world,
                          default_grid)
from encsynth.re_rl import ReProblem


def chain_mdp(length: int, cost: float = 1.0, discount: float = 1.0) -> TabularMdp:
    """States 1..length step towards absorbing state 0 with a single action."""
    moves = {(x, 0): (x - 1, cost) for x in range(1, length + 1)}
    return TabularMdp.from_transitions(length + 1, 1, moves, [0], discount)


def random_grid(rng: np.random.Generator, max_side: int = 5, trap_p: float = 0.2):
    """Random maze up to ``max_side`` squared whose goal is reachable."""
    while True:
        w, h = (int(v) for v in rng.integers(1, max_side + 1, 2))
        goal = (int(rng.integers(h)), int(rng.integers(w)))
        traps = frozenset((r, c) for r in range(h) for c in range(w)
                          if (r, c) != goal and rng.random() < trap_p)
        try:
            return build_grid_world(GridWorldSpec(w, h, goal, traps, 0.1))
        except MdpError:
            continue


def with_random_costs(mdp: TabularMdp, rng: np.random.Generator,
                      low: float = 0.05, high: float = 0.5) -> TabularMdp:
    cost = rng.uniform(low, high, mdp.cost.shape)
    cost[list(mdp.absorbing)] = 0.0
    return TabularMdp(mdp.num_states, mdp.num_actions, cost, mdp.discount, mdp.absorbing,
                      mdp.action_mask, next_state=mdp.next_state)


def random_problem(rng: np.random.Generator, max_side: int = 5, lam: float | None = None):
    grid = random_grid(rng, max_side)
    mdp = with_random_costs(grid.mdp, rng)
    return ReProblem.uniform(mdp, float(rng.uniform(0.1, 1.0)) if lam is None else lam)


@pytest.fixture(scope="session")
def grid9():
    return default_grid()


@pytest.fixture(scope="session")
def grid3():
    return build_grid_world(GridWorldSpec(3, 3, (2, 2)))
