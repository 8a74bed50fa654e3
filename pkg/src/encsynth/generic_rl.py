"""Plaintext tabular RL baselines: value iteration, Monte-Carlo ES, Q-learning.

Every routine here takes a min/argmin over actions; none of them is ever
evaluated over ciphertexts. Argmin ties go to the lowest action id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mdp import STAY, TabularMdp, spawn_state


class NonConvergenceError(RuntimeError):
    pass


def _masked(mdp: TabularMdp, table: np.ndarray) -> np.ndarray:
    return np.where(mdp.action_mask, table, np.inf)


def _argmin(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    # np.argmin returns the first minimiser, i.e. the lowest action id
    return np.argmin(_masked(mdp, q), axis=1)


def q_from_value(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """Q(x,u) = C(x,u) + gamma * sum_x' P(x'|x,u) V(x'), absorbing rows 0."""
    if mdp.deterministic:
        q = mdp.cost + mdp.discount * np.asarray(v)[mdp.next_state]
    else:
        q = mdp.cost + mdp.discount * mdp.transition @ np.asarray(v)
    q = np.where(mdp.action_mask, q, 0.0)
    q[list(mdp.absorbing)] = 0.0
    return q


def bellman_backup(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    tv = _masked(mdp, q_from_value(mdp, v)).min(axis=1)
    tv[list(mdp.absorbing)] = 0.0
    return tv


@dataclass(frozen=True)
class ViResult:
    v: np.ndarray
    iterations: int
    residual: float


def value_iteration(mdp: TabularMdp, tol: float = 1e-10,
                    max_iter: int = 100_000) -> ViResult:
    """Repeat V <- TV from V = 0; the returned V satisfies ||TV - V|| <= tol."""
    v = np.zeros(mdp.num_states)
    for k in range(max_iter):
        tv = bellman_backup(mdp, v)
        residual = float(np.max(np.abs(tv - v)))
        if residual <= tol:
            return ViResult(v, k, residual)
        v = tv
    raise NonConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def greedy_policy_from_value(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    return _argmin(mdp, q_from_value(mdp, v))


def greedy_policy(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    return _argmin(mdp, q)


@dataclass(frozen=True)
class RlConfig:
    epsilon: float = 0.3
    discount: float = 0.9
    kappa: float = 1000.0
    tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    def step_size(self, visits) -> float:
        """kappa / (kappa + n): sums diverge, squared sums converge."""
        return self.kappa / (self.kappa + float(visits))


def epsilon_greedy(mdp: TabularMdp, q: np.ndarray, x: int, epsilon: float,
                   rng: np.random.Generator) -> int:
    valid = np.flatnonzero(mdp.action_mask[x])
    if len(valid) == 1:
        return int(valid[0])
    if rng.random() < epsilon:
        return int(valid[rng.integers(len(valid))])
    return int(valid[np.argmin(q[x, valid])])


def q_learning_step(q: np.ndarray, x: int, u: int, cost: float, x_next: int,
                    alpha: float, gamma: float, mask: np.ndarray | None = None) -> np.ndarray:
    """Return a copy of ``q`` with entry (x, u) moved towards c + gamma min Q(x', .)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    out = np.array(q, dtype=float)
    row = out[x_next] if mask is None else out[x_next][mask[x_next]]
    out[x, u] = (1.0 - alpha) * out[x, u] + alpha * (cost + gamma * row.min())
    return out


@dataclass
class QLearningResult:
    q: np.ndarray
    visits: np.ndarray
    steps: int


def q_learning_run(mdp: TabularMdp, config: RlConfig, steps: int,
                   rng: np.random.Generator, q0: np.ndarray | None = None,
                   step_size: Callable | None = None) -> QLearningResult:
    """Epsilon-greedy Q-learning on the simulator ``mdp``; restarts at a uniform
    non-absorbing state whenever the absorbing state is entered."""
    gamma = mdp.discount
    q = np.zeros((mdp.num_states, mdp.num_actions)) if q0 is None else np.array(q0, float)
    visits = np.zeros_like(q, dtype=np.int64)
    schedule = step_size or config.step_size
    mask = mdp.action_mask
    absorbing = mdp.absorbing
    x = spawn_state(mdp, rng)
    for _ in range(steps):
        u = epsilon_greedy(mdp, q, x, config.epsilon, rng)
        c = mdp.cost[x, u]
        xn = int(mdp.next_state[x, u])
        alpha = schedule(visits[x, u])
        visits[x, u] += 1
        target = 0.0 if xn in absorbing else q[xn][mask[xn]].min()
        q[x, u] = (1.0 - alpha) * q[x, u] + alpha * (c + gamma * target)
        x = spawn_state(mdp, rng) if xn in absorbing else xn
    return QLearningResult(q, visits, steps)


@dataclass
class MonteCarloResult:
    q: np.ndarray
    policy: np.ndarray
    episodes: int = 0
    history: list = field(default_factory=list)


def _rollout_cost(mdp: TabularMdp, policy: np.ndarray, x0: int, u0: int, gamma: float,
                  rng: np.random.Generator, geometric: bool, max_steps: int) -> float:
    x, u = x0, u0
    total, weight = 0.0, 1.0
    for _ in range(max_steps):
        total += weight * mdp.cost[x, u]
        x = int(mdp.next_state[x, u])
        if x in mdp.absorbing:
            break
        if geometric:
            if rng.random() >= gamma:
                break
        else:
            weight *= gamma
        u = int(policy[x])
    return total


def monte_carlo_es(mdp: TabularMdp, sweeps: int, episodes_per_pair: int,
                   rng: np.random.Generator, gamma: float | None = None,
                   geometric_stopping: bool = True,
                   max_steps: int = 10_000) -> MonteCarloResult:
    """Monte-Carlo ES with exploring starts over every valid (x, u).

    With geometric stopping each rollout ends with probability 1 - gamma after
    every step and the undiscounted cost sum is averaged; otherwise the rollout
    is truncated at ``max_steps`` with bias at most
    gamma**max_steps * max|C| / (1 - gamma).
    """
    if not mdp.deterministic:
        raise ValueError("monte_carlo_es expects a deterministic simulator")
    gamma = mdp.discount if gamma is None else gamma
    # initial policy: Stay where the MDP has that action, else the lowest valid id
    stay = STAY if mdp.num_actions > STAY else None
    policy = np.array([stay if stay is not None and mdp.action_mask[x, stay]
                       else np.flatnonzero(mdp.action_mask[x])[0]
                       for x in range(mdp.num_states)])
    rest = policy.copy()
    q = np.zeros((mdp.num_states, mdp.num_actions))
    result = MonteCarloResult(q, policy)
    pairs = [(x, u) for x in mdp.nonabsorbing for u in np.flatnonzero(mdp.action_mask[x])]
    for _ in range(sweeps):
        for x, u in pairs:
            g = [_rollout_cost(mdp, policy, int(x), int(u), gamma, rng,
                               geometric_stopping, max_steps)
                 for _ in range(episodes_per_pair)]
            q[x, u] = float(np.mean(g))
            result.episodes += episodes_per_pair
        policy = _argmin(mdp, q)
        policy[list(mdp.absorbing)] = rest[list(mdp.absorbing)]
        result.history.append(policy.copy())
    result.q, result.policy = q, policy
    return result
