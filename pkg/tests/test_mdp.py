import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from encsynth.mdp import (ACTION_NAMES, STAY, Episode, GridWorldSpec, MdpError, Outcome,
                          TabularMdp, UnreachableGoalError, build_grid_world,
                          deterministic_policy, discounted_return, format_maze, load_maze,
                          DEFAULT_MAZE, parse_maze, simulate_episode, uniform_behavior,
                          valid_actions)

from conftest import random_grid

A = {name: i for i, name in enumerate(ACTION_NAMES)}


def test_open_9x9_grid_has_81_states_and_9_interior_actions():
    g = build_grid_world(GridWorldSpec(9, 9, (8, 8)))
    assert g.mdp.num_states == 81
    assert g.mdp.absorbing == frozenset({g.goal_state})
    assert len(valid_actions(g.mdp, g.state_of((4, 4)))) == 9


def test_single_cell_grid_is_one_absorbing_state():
    g = build_grid_world(GridWorldSpec(1, 1, (0, 0)))
    assert g.mdp.num_states == 1
    assert g.mdp.absorbing == frozenset({0})
    assert valid_actions(g.mdp, 0) == [STAY]
    assert g.mdp.cost[0, STAY] == 0.0


def test_trap_removes_state_and_blocks_diagonal():
    g = build_grid_world(GridWorldSpec(3, 3, (2, 2), frozenset({(1, 1)})))
    assert g.mdp.num_states == 8
    corner = g.state_of((0, 0))
    assert set(valid_actions(g.mdp, corner)) == {A["E"], A["S"], STAY}
    b = uniform_behavior(g.mdp)
    assert np.allclose(b[corner, [A["E"], A["S"], STAY]], 1 / 3)


def test_corner_without_traps_has_four_actions():
    g = build_grid_world(GridWorldSpec(3, 3, (2, 2)))
    assert set(valid_actions(g.mdp, g.state_of((0, 0)))) == {A["E"], A["S"], A["SE"], STAY}


def test_cell_ringed_by_traps_only_stays():
    # the ringed cell is itself the goal so the grid stays reachable
    traps = frozenset((r, c) for r in range(3) for c in range(3) if (r, c) != (1, 1))
    g = build_grid_world(GridWorldSpec(3, 3, (1, 1), traps))
    assert valid_actions(g.mdp, 0) == [STAY]
    b = uniform_behavior(g.mdp)
    assert b[0, STAY] == 1.0


def test_uniform_behavior_interior_is_one_ninth(grid9):
    g = build_grid_world(GridWorldSpec(9, 9, (8, 8)))
    b = uniform_behavior(g.mdp)
    assert np.allclose(b[g.state_of((4, 4))], 1 / 9)


def test_unreachable_goal_lists_cells():
    traps = frozenset({(0, 1), (1, 0), (1, 1)})
    with pytest.raises(UnreachableGoalError) as info:
        build_grid_world(GridWorldSpec(3, 3, (2, 2), traps))
    assert info.value.cells == [(0, 0)]


@pytest.mark.parametrize("kwargs", [
    dict(width=3, height=3, goal=(1, 1), traps=frozenset({(1, 1)})),
    dict(width=3, height=3, goal=(3, 0)),
    dict(width=3, height=3, goal=(0, 0), step_cost=0.0),
    dict(width=0, height=3, goal=(0, 0)),
])
def test_bad_grid_specs_rejected(kwargs):
    with pytest.raises(MdpError):
        GridWorldSpec(**kwargs)


def test_mdp_invariants_enforced():
    nxt = np.array([[0], [0]])
    mask = np.ones((2, 1), bool)
    with pytest.raises(MdpError):  # absorbing state with a cost
        TabularMdp(2, 1, np.array([[1.0], [1.0]]), 1.0, frozenset({0}), mask, next_state=nxt)
    with pytest.raises(MdpError):  # absorbing state that leaves
        TabularMdp(2, 1, np.zeros((2, 1)), 1.0, frozenset({0}), mask,
                   next_state=np.array([[1], [0]]))
    with pytest.raises(MdpError):  # undiscounted without absorbing state
        TabularMdp(2, 1, np.zeros((2, 1)), 1.0, frozenset(), mask, next_state=nxt)
    with pytest.raises(MdpError):  # rows that do not sum to one
        P = np.zeros((2, 1, 2))
        P[:, 0, 0] = 0.9
        TabularMdp(2, 1, np.zeros((2, 1)), 0.5, frozenset(), mask, transition=P)
    with pytest.raises(MdpError):
        TabularMdp(2, 1, np.array([[0.0], [np.inf]]), 1.0, frozenset({0}), mask,
                   next_state=nxt)


def test_maze_parse_format_round_trip():
    spec = load_maze(DEFAULT_MAZE)
    assert parse_maze(format_maze(spec)) == spec
    assert spec.width == 9 and spec.height == 9


@pytest.mark.parametrize("text", ["", "3 3\n...\n...\n", "2 1\n.X\n", "2 1\nGG\n",
                                  "a b\n..\n"])
def test_bad_maze_text_rejected(text):
    with pytest.raises(MdpError):
        parse_maze(text)


def test_stay_forever_truncates(grid3):
    mdp = grid3.mdp
    pi = deterministic_policy(mdp, [STAY] * mdp.num_states)
    ep = simulate_episode(mdp, pi, 0, 5, np.random.default_rng(0))
    assert ep.length == 5 and ep.outcome is Outcome.TRUNCATED


def test_one_step_to_goal_absorbs(grid3):
    mdp = grid3.mdp
    x0 = grid3.state_of((1, 1))
    actions = [STAY] * mdp.num_states
    actions[x0] = A["SE"]
    ep = simulate_episode(mdp, deterministic_policy(mdp, actions), x0, 200,
                          np.random.default_rng(0))
    assert ep.length == 1 and ep.outcome is Outcome.ABSORBED
    assert ep.final_state == grid3.goal_state
    assert ep.steps[0][2] == mdp.cost[x0, A["SE"]]


def test_episode_seed_determinism(grid9):
    b = uniform_behavior(grid9.mdp)
    e1 = simulate_episode(grid9.mdp, b, 0, 200, np.random.default_rng(7))
    e2 = simulate_episode(grid9.mdp, b, 0, 200, np.random.default_rng(7))
    assert e1.to_csv() == e2.to_csv()
    assert e1.to_csv().splitlines()[0] == "t,state,action,cost"


def test_absorbing_start_rejected(grid3):
    with pytest.raises(MdpError):
        simulate_episode(grid3.mdp, uniform_behavior(grid3.mdp), grid3.goal_state, 5,
                         np.random.default_rng(0))


@pytest.mark.parametrize("costs,gamma,expected", [
    ([1, 1, 1], 0.9, 2.71), ([], 0.9, 0.0), ([1, 1, 1], 1.0, 3.0)])
def test_discounted_return(costs, gamma, expected):
    assert discounted_return(costs, gamma) == pytest.approx(expected, abs=1e-12)


def test_discounted_return_of_episode():
    ep = Episode(1, ((1, 0, 1.0), (2, 0, 1.0)), Outcome.ABSORBED, 0)
    assert discounted_return(ep, 0.5) == 1.5


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), max_steps=st.integers(1, 60))
def test_grid_invariants_and_episode_bounds(seed, max_steps):
    rng = np.random.default_rng(seed)
    g = random_grid(rng)
    mdp = g.mdp
    P = mdp.transition_matrix()
    assert np.allclose(P.sum(axis=2), 1.0, atol=1e-12)
    for x in mdp.absorbing:
        assert np.all(mdp.next_state[x] == x) and np.all(mdp.cost[x] == 0)
    if len(mdp.nonabsorbing) == 0:
        return
    b = uniform_behavior(mdp)
    x0 = int(rng.choice(mdp.nonabsorbing))
    ep = simulate_episode(mdp, b, x0, max_steps, rng)
    assert ep.length <= max_steps
    for x, u, c in ep.steps:
        assert 0 <= x < mdp.num_states and mdp.action_mask[x, u]
        assert c == mdp.cost[x, u]
    assert (ep.outcome is Outcome.ABSORBED) == (ep.final_state in mdp.absorbing)
