"""Compiled-vs-pure kernel benchmark.

Times every routine shared by ``encsynth._kernels`` (Cython) and
``encsynth._purekernels`` on identical inputs, checks that both produce the
same output, and prints one row per routine with the speedup.

    python bench/benchmark.py [--repeat 5] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from encsynth import _purekernels as pure
from encsynth.mdp import default_grid, policy_cdf, spawn_state
from encsynth.re_rl import ReProblem, factor_table
from encsynth.rlwe.ntt import ntt_primes, tables

try:
    from encsynth import _kernels as compiled
except ImportError:
    compiled = None


def ntt_case(n: int):
    q = ntt_primes(60, n, 1)[0]
    t = tables(q, n)
    a = np.random.default_rng(0).integers(0, q, n, dtype=np.uint64)

    def run(mod):
        x = a.copy()
        mod.ntt_forward(x, q, t.psi_rev, t.psi_rev_shoup)
        mod.ntt_inverse(x, q, t.ipsi_rev, t.ipsi_rev_shoup, t.n_inv)
        return x

    return f"ntt fwd+inv N=2^{n.bit_length() - 1}", run


def mul_case(n: int):
    q = ntt_primes(60, n, 1)[0]
    rng = np.random.default_rng(1)
    a, b = (rng.integers(0, q, n, dtype=np.uint64) for _ in range(2))
    return f"mul_mod N=2^{n.bit_length() - 1}", lambda mod: mod.mul_mod(a, b, q)


def zlearn_case(episodes: int):
    grid = default_grid()
    mdp = grid.mdp
    problem = ReProblem.uniform(mdp, 0.15)
    cdf = policy_cdf(problem.behavior)
    fac = np.ascontiguousarray(factor_table(problem))
    rng = np.random.default_rng(2)
    starts = [spawn_state(mdp, rng) for _ in range(episodes)]
    draws = [rng.random(200) for _ in range(episodes)]

    def run(mod):
        z = np.ones(mdp.num_states)
        counts = np.zeros(mdp.num_states, dtype=np.int64)
        for x0, u in zip(starts, draws):
            mod.zlearn_episode(mdp.next_state, cdf, fac, mdp.absorbing_mask, z, counts,
                               1000.0, x0, u)
        return z

    return f"zlearn {episodes} episodes (9x9)", run


def sample_case(episodes: int):
    mdp = default_grid().mdp
    cdf = policy_cdf(ReProblem.uniform(mdp).behavior)
    rng = np.random.default_rng(3)
    starts = [spawn_state(mdp, rng) for _ in range(episodes)]
    draws = [rng.random(200) for _ in range(episodes)]

    def run(mod):
        out = []
        for x0, u in zip(starts, draws):
            states = np.empty(200, dtype=np.int64)
            actions = np.empty(200, dtype=np.int64)
            n, _ = mod.sample_path(mdp.next_state, cdf, mdp.absorbing_mask, x0, u,
                                   states, actions)
            out.append(states[:n].copy())
        return np.concatenate(out)

    return f"sample_path {episodes} episodes (9x9)", run


def measure(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 1 << 16:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write results to this file")
    args = p.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; reinstall with Cython available", file=sys.stderr)
        return 1
    cases = [ntt_case(2**12), ntt_case(2**14), mul_case(2**14), zlearn_case(200),
             sample_case(200)]
    rows = []
    print(f"{'routine':34s} {'compiled':>12s} {'pure':>12s} {'speedup':>9s}")
    for name, run in cases:
        if not np.array_equal(run(compiled), run(pure)):
            print(f"{name}: compiled and pure outputs differ", file=sys.stderr)
            return 2
        tc = measure(lambda: run(compiled), args.repeat)
        tp = measure(lambda: run(pure), args.repeat)
        rows.append({"routine": name, "compiled_s": tc, "pure_s": tp, "speedup": tp / tc})
        print(f"{name:34s} {tc * 1e3:10.3f}ms {tp * 1e3:10.3f}ms {tp / tc:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
