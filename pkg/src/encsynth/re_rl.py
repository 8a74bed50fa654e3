"""Relative-entropy-regularized RL: linearly solvable value iteration,
path-integral Monte Carlo and Z-learning.

Desirability tables are full-length arrays over the MDP's states with
absorbing entries pinned to 1. None of the update rules here compare values
across actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .mdp import (Episode, MdpError, Outcome, TabularMdp, check_policy, policy_cdf,
                  simulate_episode, spawn_state, uniform_behavior)


class NonConvergenceError(RuntimeError):
    pass


class DegenerateSystemError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReProblem:
    mdp: TabularMdp
    behavior: np.ndarray
    lam: float = 0.15

    def __post_init__(self):
        if not self.mdp.deterministic:
            raise MdpError("RE-regularized problems need deterministic transitions")
        if not self.mdp.absorbing:
            raise MdpError("RE-regularized problems need an absorbing state")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        b = check_policy(self.mdp, self.behavior)
        if np.any(b[self.mdp.action_mask] <= 0):
            raise MdpError("behavior policy must be positive on every valid action")
        b = np.ascontiguousarray(b)
        b.setflags(write=False)
        object.__setattr__(self, "behavior", b)

    @classmethod
    def uniform(cls, mdp: TabularMdp, lam: float = 0.15) -> ReProblem:
        return cls(mdp, uniform_behavior(mdp), lam)

    def weights(self) -> np.ndarray:
        """b(u|x) exp(-C(x,u)/lambda), zero on invalid actions."""
        return np.where(self.mdp.action_mask,
                        self.behavior * np.exp(-self.mdp.cost / self.lam), 0.0)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Z = A Z + w over the non-absorbing states listed in ``states``."""

    A: np.ndarray
    w: np.ndarray
    states: np.ndarray
    num_states: int

    def to_text(self) -> str:
        """Dense row-major text: one row of ``[A | w]`` per line."""
        rows = np.hstack([self.A, self.w[:, None]])
        return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in rows)

    def embed(self, z_bar: np.ndarray) -> np.ndarray:
        z = np.ones(self.num_states)
        z[self.states] = z_bar
        return z


def build_linear_system(problem: ReProblem) -> LinearSystem:
    mdp = problem.mdp
    states = mdp.nonabsorbing
    pos = {int(x): i for i, x in enumerate(states)}
    weight = problem.weights()
    S = len(states)
    A = np.zeros((S, S))
    w = np.zeros(S)
    for i, x in enumerate(states):
        for u in np.flatnonzero(mdp.action_mask[x]):
            j = int(mdp.next_state[x, u])
            if j in mdp.absorbing:
                w[i] += weight[x, u]
            else:
                A[i, pos[j]] += weight[x, u]
    return LinearSystem(A, w, states, mdp.num_states)


@dataclass(frozen=True)
class LsviResult:
    z: np.ndarray
    iterations: int
    residual: float


def lsvi_solve(system: LinearSystem, z0: np.ndarray | None = None, tol: float = 1e-13,
               max_iter: int = 1_000_000) -> LsviResult:
    """Iterate Z <- A Z + w from a positive start until the update is below ``tol``."""
    if not np.any(system.w > 0):
        raise DegenerateSystemError(
            "w = 0: no state reaches the absorbing state, the fixed point is Z = 0")
    A, w = system.A, system.w
    z = np.ones(len(w)) if z0 is None else np.asarray(z0, dtype=float).copy()
    if z.shape != w.shape or np.any(z <= 0):
        raise ValueError("z0 must be a positive vector over the system's states")
    for k in range(1, max_iter + 1):
        z_next = A @ z + w
        delta = float(np.max(np.abs(z_next - z))) if len(z) else 0.0
        z = z_next
        if delta <= tol:
            residual = float(np.max(np.abs(A @ z + w - z))) if len(z) else 0.0
            return LsviResult(system.embed(z), k, residual)
    raise NonConvergenceError(
        f"no convergence in {max_iter} iterations; spectral radius of A may be >= 1")


def solve_direct(system: LinearSystem) -> np.ndarray:
    """Solve (I - A) Z = w by LU with partial pivoting."""
    S = len(system.w)
    try:
        z = np.linalg.solve(np.eye(S) - system.A, system.w)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSystemError("I - A is singular") from exc
    return system.embed(z)


def contraction_check(system: LinearSystem, iterations: int = 200,
                      rtol: float = 1e-6) -> tuple[bool, float]:
    """Perron-root estimate of the nonnegative matrix A by shifted power iteration.

    Iterating on A + I keeps the iterate strictly positive and removes the
    periodicity that stalls plain power iteration; the Collatz-Wielandt
    ratios bracket rho(A) + 1.
    """
    A = system.A
    if A.size == 0 or not np.any(A):
        return True, 0.0
    if np.any(A < 0):
        raise ValueError("A must be nonnegative")
    v = np.ones(A.shape[0])
    upper = math.inf
    for _ in range(iterations):
        y = A @ v + v
        ratios = y / v
        lo, upper = float(ratios.min()), float(ratios.max())
        if upper - lo <= rtol * upper:
            break
        v = y / y.max()
    rho = upper - 1.0
    return rho < 1.0, rho


def desirability_to_value(z: np.ndarray, lam: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("desirability must be strictly positive")
    return -lam * np.log(z)


def value_to_desirability(v: np.ndarray, lam: float) -> np.ndarray:
    return np.exp(-np.asarray(v, dtype=float) / lam)


def rho_table(problem: ReProblem, v: np.ndarray) -> np.ndarray:
    """rho(x, u) = C(x, u) + V(F(x, u)); NaN on invalid actions."""
    mdp = problem.mdp
    rho = mdp.cost + np.asarray(v)[mdp.next_state]
    return np.where(mdp.action_mask, rho, np.nan)


def boltzmann_policy(problem: ReProblem, z: np.ndarray) -> np.ndarray:
    """pi(u|x) proportional to b(u|x) exp(-C(x,u)/lambda) Z(F(x,u))."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("desirability must be strictly positive")
    mdp = problem.mdp
    unnorm = problem.weights() * z[mdp.next_state]
    total = unnorm.sum(axis=1, keepdims=True)
    bad = np.flatnonzero(total[:, 0] <= 0)
    bad = [x for x in bad if x not in mdp.absorbing]
    if bad:
        raise FloatingPointError(
            f"Boltzmann weights underflow at states {bad}; rescale lambda or costs")
    pi = np.divide(unnorm, total, out=np.zeros_like(unnorm), where=total > 0)
    for x in mdp.absorbing:
        pi[x] = problem.behavior[x]
    return pi


def path_integral_stats(episodes: Sequence[Episode], lam: float) -> tuple[float, float]:
    """(mean, standard error) of exp(-G/lambda) over absorbed episodes."""
    if not episodes:
        raise ValueError("need at least one episode")
    start = episodes[0].start
    for ep in episodes:
        if ep.start != start:
            raise ValueError("episodes must share their start state")
        if ep.outcome is not Outcome.ABSORBED:
            raise ValueError("truncated episode: estimator needs absorbed paths")
    samples = np.exp(-np.array([ep.total_cost for ep in episodes]) / lam)
    n = len(samples)
    sem = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(samples.mean()), sem


def path_integral_estimate(episodes: Sequence[Episode], lam: float) -> float:
    return path_integral_stats(episodes, lam)[0]


def path_integral_value(episodes: Sequence[Episode], lam: float) -> float:
    return -lam * math.log(path_integral_estimate(episodes, lam))


def sample_paths(problem: ReProblem, x0: int, n: int, rng: np.random.Generator,
                 max_steps: int = 10_000) -> list[Episode]:
    cdf = policy_cdf(problem.behavior)
    return [simulate_episode(problem.mdp, problem.behavior, x0, max_steps, rng, cdf)
            for _ in range(n)]


def z_learning_step(z: np.ndarray, x: int, cost: float, x_next: int, alpha: float,
                    lam: float) -> np.ndarray:
    """One TD update of the desirability at ``x``; returns a new table."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    out = np.array(z, dtype=float)
    f = math.exp(-cost / lam)
    out[x] = (1.0 - alpha) * out[x] + alpha * (f * out[x_next])
    return out


@dataclass(frozen=True)
class LearningRateSchedule:
    """alpha = kappa / (kappa + n(x)) with n(x) the prior visits to x."""

    kappa: float = 1000.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    def __call__(self, visits) -> float:
        return self.kappa / (self.kappa + float(visits))


def normalized_error(v_star: np.ndarray, v_est: np.ndarray,
                     states: np.ndarray | None = None) -> float:
    """mean |V* - V_est| / mean V* over ``states`` (default: all given)."""
    v_star = np.asarray(v_star, dtype=float)
    v_est = np.asarray(v_est, dtype=float)
    if v_star.shape != v_est.shape:
        raise ValueError("value tables must cover the same states")
    if states is not None:
        v_star, v_est = v_star[states], v_est[states]
    denom = float(np.mean(v_star))
    if denom <= 0:
        raise ValueError("mean of V* must be positive")
    return float(np.mean(np.abs(v_star - v_est))) / denom


@dataclass
class ZLearningResult:
    z: np.ndarray
    counts: np.ndarray
    snapshots: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    steps: int = 0


def factor_table(problem: ReProblem,
                 factor: Callable[[float], float] | None = None) -> np.ndarray:
    """exp(-C/lambda) per (x, u), or ``factor(C)`` when given."""
    cost = problem.mdp.cost
    if factor is None:
        return np.exp(-cost / problem.lam)
    cache = {}
    out = np.empty_like(cost)
    for idx, c in np.ndenumerate(cost):
        if c not in cache:
            cache[c] = float(factor(float(c)))
        out[idx] = cache[c]
    return out


def z_learning_run(problem: ReProblem, schedule: LearningRateSchedule, episodes: int,
                   max_steps: int, rng: np.random.Generator,
                   checkpoints: Iterable[int] = (),
                   v_star: np.ndarray | None = None,
                   factor: Callable[[float], float] | None = None) -> ZLearningResult:
    """Z-learning under the behavior policy with uniform random spawns.

    Snapshots are taken after the listed numbers of completed episodes (0 is
    the initialization). With ``v_star`` the normalized error of
    -lambda ln Z against it is recorded after every episode. ``factor``
    replaces exp(-c/lambda), e.g. by a polynomial approximation.
    """
    mdp = problem.mdp
    z = np.ones(mdp.num_states)
    counts = np.zeros(mdp.num_states, dtype=np.int64)
    cdf = policy_cdf(problem.behavior)
    fac = np.ascontiguousarray(factor_table(problem, factor))
    absorbing = mdp.absorbing_mask
    nonabs = mdp.nonabsorbing
    checkpoints = set(checkpoints)
    result = ZLearningResult(z, counts)
    if 0 in checkpoints:
        result.snapshots[0] = z.copy()
    for k in range(1, episodes + 1):
        x0 = spawn_state(mdp, rng)
        uniforms = rng.random(max_steps)
        n, _ = kernels.zlearn_episode(mdp.next_state, cdf, fac, absorbing, z, counts,
                                      float(schedule.kappa), x0, uniforms)
        result.steps += n
        if v_star is not None:
            result.errors.append(
                normalized_error(v_star, -problem.lam * np.log(z), nonabs))
        if k in checkpoints:
            result.snapshots[k] = z.copy()
    return result


def kl_policy_value_exact(problem: ReProblem, pi: np.ndarray) -> np.ndarray:
    """Exact regularized cost-to-go of a stationary policy ``pi``."""
    mdp = problem.mdp
    pi = check_policy(mdp, pi)
    b = problem.behavior
    if np.any((pi > 0) & (b <= 0)):
        raise ValueError("pi must be absolutely continuous with respect to b")
    states = mdp.nonabsorbing
    # absorption must be reachable in the support graph of pi
    reach = set(mdp.absorbing)
    changed = True
    while changed:
        changed = False
        for x in states:
            if int(x) in reach:
                continue
            succ = mdp.next_state[x][pi[x] > 0]
            if any(int(s) in reach for s in succ):
                reach.add(int(x))
                changed = True
    missing = [int(x) for x in states if int(x) not in reach]
    if missing:
        raise ValueError(f"absorption unreachable under pi from states {missing}")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(pi > 0, np.log(pi / np.where(b > 0, b, 1.0)), 0.0)
    reward = np.sum(pi * (mdp.cost + problem.lam * log_ratio), axis=1)
    pos = {int(x): i for i, x in enumerate(states)}
    S = len(states)
    M = np.eye(S)
    for i, x in enumerate(states):
        for u in np.flatnonzero(pi[x] > 0):
            j = int(mdp.next_state[x, u])
            if j in pos:
                M[i, pos[j]] -= pi[x, u]
    v = np.zeros(mdp.num_states)
    v[states] = np.linalg.solve(M, reward[states])
    return v
