"""Command-line experiment harness.

Verbs: ``vi`` (ground truth), ``zlearn`` (plaintext Z-learning), ``encrypted``
(client-server session), ``baselines`` (discounted generic-RL oracles),
``compare`` (join error series) and ``serve`` (stand-alone socket server).

Configuration precedence: built-in defaults, then a JSON config file
(``--config``; keys identical to the long flag names), then ``ENCSYNTH_<KEY>``
environment variables, then command-line flags.

Exit codes: 0 success, 2 configuration, 3 convergence, 4 session, 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import generic_rl
from .he.core import HeError, HeProfile
from .he.plain import NoiseModel
from .he.poly import ExpApproxConfig, exact_factor
from .mdp import DEFAULT_MAZE, GridWorld, MdpError, build_grid_world, load_maze
from .re_rl import (DegenerateSystemError, LearningRateSchedule, NonConvergenceError,
                    ReProblem, build_linear_system, desirability_to_value, lsvi_solve,
                    normalized_error, solve_direct, z_learning_run)
from .service.errors import SessionAborted, SessionFailed
from .service.transport import TransportError

__all__ = ["ExperimentConfig", "ConfigError", "normalized_error", "emit_value_snapshots",
           "cmd_vi", "cmd_zlearn", "cmd_encrypted", "cmd_baselines", "cmd_compare", "main"]

log = logging.getLogger("encsynth")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_SESSION, EXIT_IO = 0, 2, 3, 4, 5
BACKENDS = ("exact", "emulator", "rlwe")
TRANSPORTS = ("inprocess", "socket")
FACTORS = ("approx", "exp")
POSITIVITY_FLOOR = 1e-12
CROSS_CHECK_TOL = 1e-10


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    maze: str = str(DEFAULT_MAZE)
    step_cost: float = 0.1
    lam: float = 0.15
    kappa: float = 1000.0
    episodes: int = 5000
    max_steps: int = 200
    seed: int = 0
    backend: str = "emulator"
    ring_dimension: int = 2**14
    chain_bits: list = field(default_factory=lambda: [60, 30, 30, 30, 30, 60])
    log2_scale: int = 40
    exp_degree: int = 8
    exp_c_max: float = 0.0          # 0: the maze's largest step cost
    exp_squarings: int = -1         # -1: smallest count keeping c_max/(lam 2^m) <= 1
    exp_method: str = "taylor"
    noise_sigma: float = 2.0**-25
    table_scale: float = 2.0**16
    factor: str = "approx"
    transport: str = "inprocess"
    connect: str = ""
    resume: str = ""
    checkpoints: list = field(default_factory=lambda: [1, 10, 100, 1000, 5000])
    gamma: float = 0.9
    q_steps: int = 200_000
    q_epsilon: float = 0.3
    mc_sweeps: int = 12
    mc_episodes: int = 200
    vi: str = ""
    out: str = "runs"
    seeds: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    host: str = "127.0.0.1"
    port: int = 0

    # ---- derived objects -------------------------------------------------
    def grid(self) -> GridWorld:
        path = Path(self.maze)
        if not path.is_file():
            raise ConfigError(f"maze file {self.maze} does not exist")
        return build_grid_world(load_maze(path, self.step_cost))

    def profile(self) -> HeProfile:
        return HeProfile(self.ring_dimension, tuple(self.chain_bits), self.log2_scale)

    def exp_config(self, grid: GridWorld | None = None) -> ExpApproxConfig:
        c_max = self.exp_c_max
        if c_max <= 0:
            g = grid or self.grid()
            c_max = float(g.mdp.cost.max())
        return ExpApproxConfig(self.exp_degree, c_max, self.lam,
                               None if self.exp_squarings < 0 else self.exp_squarings,
                               self.exp_method)

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}")
        if self.factor not in FACTORS:
            raise ConfigError(f"factor must be one of {FACTORS}")
        if self.episodes < 0 or self.max_steps < 1:
            raise ConfigError("episodes must be >= 0 and max_steps >= 1")
        if not (self.lam > 0 and self.kappa > 0 and self.step_cost > 0):
            raise ConfigError("lam, kappa and step_cost must be positive")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if any(k < 0 for k in self.checkpoints):
            raise ConfigError("checkpoints must be non-negative")
        if self.connect and ":" not in self.connect:
            raise ConfigError("connect must be host:port")
        try:
            profile = self.profile()
            cfg = self.exp_config()
        except (ValueError, MdpError) as exc:
            raise ConfigError(str(exc)) from None
        if self.backend == "rlwe" and not 2**10 <= profile.ring_dimension <= 2**14:
            raise ConfigError("rlwe backend supports ring dimensions 2^10..2^14")
        if self.backend != "exact" and cfg.depth > profile.usable_levels:
            raise ConfigError(f"exp approximation needs {cfg.depth} levels, profile has "
                              f"{profile.usable_levels}")


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_LISTS = {"chain_bits": int, "checkpoints": int, "seeds": int, "runs": str}


def _coerce(name: str, value):
    default = getattr(ExperimentConfig(), name)
    try:
        if name in _LISTS:
            if isinstance(value, str):
                value = [v for v in value.replace(" ", "").split(",") if v]
            return [_LISTS[name](v) for v in value]
        if isinstance(default, bool):
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true")
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {name}") from None


def load_config(args: argparse.Namespace, environ=os.environ) -> ExperimentConfig:
    values = asdict(ExperimentConfig())
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not JSON: {exc}") from None
        unknown = set(data) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        values.update({k: _coerce(k, v) for k, v in data.items()})
    for name in _FIELDS:
        env = environ.get("ENCSYNTH_" + name.upper())
        if env is not None:
            values[name] = _coerce(name, env)
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = _coerce(name, v)
    return ExperimentConfig(**values)


# ---- output helpers -------------------------------------------------------

def _fmt(v: float) -> str:
    return "NaN" if math.isnan(v) else repr(float(v))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _write_text(path, buf.getvalue())


def value_grid(z: np.ndarray, grid: GridWorld, lam: float) -> np.ndarray:
    """height x width array of V = -lam ln Z; traps NaN, goal 0."""
    spec = grid.spec
    out = np.full((spec.height, spec.width), np.nan)
    z = np.asarray(z, dtype=float)
    v = -lam * np.log(np.where(z > 0, z, POSITIVITY_FLOOR)) + 0.0
    for s, (r, c) in enumerate(grid.cells):
        out[r, c] = v[s]
    out[spec.goal] = 0.0
    return out


def write_value_grid(path, z: np.ndarray, grid: GridWorld, lam: float) -> None:
    """height rows x width columns, no header."""
    rows = [[_fmt(v) for v in row] for row in value_grid(z, grid, lam)]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    _write_text(Path(path), buf.getvalue())


def emit_value_snapshots(snapshots: dict, grid: GridWorld, lam: float, out_dir) -> list:
    """Write one ``value_k<episode>.csv`` grid per snapshot; returns the paths."""
    paths = []
    for k in sorted(snapshots):
        path = Path(out_dir) / f"value_k{k}.csv"
        write_value_grid(path, snapshots[k], grid, lam)
        paths.append(path)
    return paths


def _write_error_series(path: Path, errors) -> None:
    _write_csv(path, ["episode", "error"], [[k, _fmt(e)] for k, e in enumerate(errors, 1)])


def read_error_series(path) -> list:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["episode", "error"]:
        raise ConfigError(f"{path} is not an error series")
    return [float(r[1]) for r in rows[1:]]


def _series_summary(errors) -> dict:
    if not errors:
        return {"final_error": None}
    e = np.asarray(errors)
    return {"final_error": float(e[-1]), "initial_error": float(e[0]),
            "head100_mean": float(e[:100].mean()), "tail500_mean": float(e[-500:].mean())}


# ---- commands --------------------------------------------------------------

def _problem(cfg: ExperimentConfig) -> tuple[GridWorld, ReProblem]:
    grid = cfg.grid()
    return grid, ReProblem.uniform(grid.mdp, cfg.lam)


def ground_truth(cfg: ExperimentConfig, problem: ReProblem) -> tuple[np.ndarray, dict]:
    """Z* from lsvi, cross-checked against the direct solve."""
    system = build_linear_system(problem)
    it = lsvi_solve(system)
    direct = solve_direct(system)
    diff = float(np.max(np.abs(it.z - direct)))
    if diff > CROSS_CHECK_TOL:
        raise NonConvergenceError(f"lsvi and direct solve differ by {diff:.3e}")
    return it.z, {"lsvi_iterations": it.iterations, "lsvi_residual": it.residual,
                  "lsvi_direct_max_diff": diff}


def _v_star(cfg: ExperimentConfig, grid: GridWorld, problem: ReProblem) -> np.ndarray:
    if cfg.vi:
        path = Path(cfg.vi) / "v_star.csv"
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != grid.mdp.num_states:
            raise ConfigError(f"{path} does not match the maze")
        return np.array([float(r["v"]) for r in rows])
    z, _ = ground_truth(cfg, problem)
    return desirability_to_value(z, cfg.lam)


def cmd_vi(cfg: ExperimentConfig) -> dict:
    grid, problem = _problem(cfg)
    z, metrics = ground_truth(cfg, problem)
    v = desirability_to_value(z, cfg.lam) + 0.0
    out = Path(cfg.out)
    _write_csv(out / "v_star.csv", ["state", "row", "col", "z", "v"],
               [[s, r, c, _fmt(z[s]), _fmt(v[s])] for s, (r, c) in enumerate(grid.cells)])
    write_value_grid(out / "value_star.csv", z, grid, cfg.lam)
    metrics["states"] = grid.mdp.num_states
    _write_json(out / "metrics.json", metrics)
    return metrics


def _snapshot_points(cfg: ExperimentConfig) -> set:
    return {0} | {k for k in cfg.checkpoints if k <= cfg.episodes}


def cmd_zlearn(cfg: ExperimentConfig) -> dict:
    grid, problem = _problem(cfg)
    v_star = _v_star(cfg, grid, problem)
    factor = exact_factor(cfg.exp_config(grid)) if cfg.factor == "approx" else None
    res = z_learning_run(problem, LearningRateSchedule(cfg.kappa), cfg.episodes,
                         cfg.max_steps, np.random.default_rng(cfg.seed),
                         _snapshot_points(cfg), v_star, factor)
    out = Path(cfg.out)
    emit_value_snapshots(res.snapshots, grid, cfg.lam, out)
    _write_error_series(out / "error_series.csv", res.errors)
    metrics = {"episodes": cfg.episodes, "transitions": res.steps, **_series_summary(res.errors)}
    _write_json(out / "metrics.json", metrics)
    return metrics


def backend_seed(seed: int) -> int:
    """Key/noise seed derived from the run seed (independent of the episode stream)."""
    return int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])


def cmd_encrypted(cfg: ExperimentConfig) -> dict:
    from .he.keys import make_backend
    from .service.client import (Checkpoint, SessionConfig, predict_refreshes, run_session,
                                 session_transitions)
    from .service.server import SynthServer
    from .service.transport import InProcessTransport, SocketServer, SocketTransport

    grid, problem = _problem(cfg)
    v_star = _v_star(cfg, grid, problem)
    exp_cfg = cfg.exp_config(grid)
    backend = make_backend(cfg.backend, cfg.profile(), backend_seed(cfg.seed),
                           NoiseModel(cfg.noise_sigma))
    session = SessionConfig(cfg.episodes, cfg.max_steps, cfg.kappa, exp_cfg, cfg.table_scale,
                            tuple(sorted(_snapshot_points(cfg))))
    resume = Checkpoint.load(cfg.resume) if cfg.resume else None
    out = Path(cfg.out)
    local = None
    if cfg.connect:
        host, port = cfg.connect.rsplit(":", 1)
        transport = SocketTransport(host, int(port))
    elif cfg.transport == "socket":
        local = SocketServer(SynthServer(), cfg.host, cfg.port).start()
        transport = SocketTransport(local.host, local.port)
    else:
        transport = InProcessTransport(SynthServer())
    try:
        res = run_session(problem, backend, transport, session,
                          np.random.default_rng(cfg.seed), v_star, resume)
    except SessionAborted as exc:
        if exc.checkpoint is not None:
            out.mkdir(parents=True, exist_ok=True)
            exc.checkpoint.save(out / "checkpoint.json")
            log.error("checkpoint written to %s", out / "checkpoint.json")
        raise
    finally:
        transport.close()
        if local is not None:
            local.close()
    emit_value_snapshots(res.snapshots, grid, cfg.lam, out)
    _write_error_series(out / "error_series.csv", res.errors)
    metrics = {k: v for k, v in res.metrics.items() if k != "wall_time_s"}
    metrics.update(_series_summary(res.errors))
    metrics["backend"] = cfg.backend
    metrics["eps_approx"] = exp_cfg.eps_approx
    metrics["exp_depth"] = exp_cfg.depth
    if resume is None and cfg.backend != "exact":
        tr = session_transitions(problem, cfg.episodes, cfg.max_steps,
                                 np.random.default_rng(cfg.seed))
        metrics["predicted"] = predict_refreshes(tr, cfg.profile().usable_levels, exp_cfg)
    _write_json(out / "metrics.json", metrics)
    log.info("session wall time %.2f s", res.metrics["wall_time_s"])
    return metrics


def cmd_baselines(cfg: ExperimentConfig) -> dict:
    grid = cfg.grid()
    mdp = grid.mdp.with_discount(cfg.gamma)
    rng = np.random.default_rng(cfg.seed)
    vi = generic_rl.value_iteration(mdp)
    q_star = generic_rl.q_from_value(mdp, vi.v)
    pi_vi = generic_rl.greedy_policy_from_value(mdp, vi.v)
    ql = generic_rl.q_learning_run(mdp, generic_rl.RlConfig(cfg.q_epsilon, cfg.gamma, cfg.kappa),
                                   cfg.q_steps, rng)
    mask = mdp.action_mask
    q_err = float(np.max(np.abs(np.where(mask, ql.q - q_star, 0.0))))
    mc = generic_rl.monte_carlo_es(mdp, cfg.mc_sweeps, cfg.mc_episodes, rng)
    nonabs = mdp.nonabsorbing
    v_q = np.where(mask, ql.q, np.inf).min(axis=1)
    v_q[list(mdp.absorbing)] = 0.0
    out = Path(cfg.out)
    _write_csv(out / "baselines.csv",
               ["state", "row", "col", "v_vi", "v_q", "action_vi", "action_mc"],
               [[s, r, c, _fmt(vi.v[s]), _fmt(v_q[s]), int(pi_vi[s]), int(mc.policy[s])]
                for s, (r, c) in enumerate(grid.cells)])
    metrics = {"gamma": cfg.gamma, "vi_iterations": vi.iterations,
               "vi_residual": vi.residual, "q_steps": cfg.q_steps,
               "q_max_error": q_err,
               "mc_policy_agreement": float(np.mean(
                   [_equivalent(mdp, q_star, x, mc.policy[x], pi_vi[x]) for x in nonabs])),
               "mc_rollouts": mc.episodes}
    _write_json(out / "metrics.json", metrics)
    return metrics


def _equivalent(mdp, q_star, x, u, u_ref, tol=1e-9) -> bool:
    """Actions agree, or are tied under Q*."""
    return bool(u == u_ref or abs(q_star[x, u] - q_star[x, u_ref]) <= tol)


def cmd_compare(cfg: ExperimentConfig) -> dict:
    if not cfg.runs:
        raise ConfigError("compare needs --runs dir1,dir2,...")
    series = {}
    for run in cfg.runs:
        path = Path(run) / "error_series.csv"
        series[Path(run).name or run] = read_error_series(path)
    names = list(series)
    length = max(len(s) for s in series.values())
    rows = [[k + 1] + [_fmt(series[n][k]) if k < len(series[n]) else "" for n in names]
            for k in range(length)]
    out = Path(cfg.out)
    _write_csv(out / "compare.csv", ["episode"] + names, rows)
    metrics = {n: _series_summary(s) for n, s in series.items()}
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_serve(cfg: ExperimentConfig) -> dict:
    import time

    from .service.server import SynthServer
    from .service.transport import SocketServer

    with SocketServer(SynthServer(), cfg.host, cfg.port) as srv:
        print(f"listening on {srv.host}:{srv.port}", flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
    return {}


COMMANDS = {"vi": cmd_vi, "zlearn": cmd_zlearn, "encrypted": cmd_encrypted,
            "baselines": cmd_baselines, "compare": cmd_compare, "serve": cmd_serve}
SEEDED = {"zlearn", "encrypted", "baselines"}


# ---- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="encsynth", description=__doc__.split("\n\n")[0])
    p.add_argument("verb", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file with keys named like the long flags")
    p.add_argument("--quiet", action="store_true")
    for name, f in _FIELDS.items():
        flags = [f"--{name}"] + ([f"--{name.replace('_', '-')}"] if "_" in name else [])
        p.add_argument(*flags, dest=name, default=None,
                       help=f"(default: {getattr(ExperimentConfig(), name)!r})")
    return p


def _run_one(verb: str, cfg: ExperimentConfig) -> dict:
    cfg.validate()
    out = Path(cfg.out)
    result = COMMANDS[verb](cfg)
    if verb != "serve":
        _write_json(out / "run_config.json", {"verb": verb, **asdict(cfg)})
    return result


def _run_seed(args) -> dict:
    verb, cfg = args
    return _run_one(verb, cfg)


def run(verb: str, cfg: ExperimentConfig) -> int:
    """Run a verb and map failures onto exit codes."""
    try:
        if cfg.seeds and verb in SEEDED:
            jobs = []
            for s in cfg.seeds:
                sub = ExperimentConfig(**{**asdict(cfg), "seed": s, "seeds": [],
                                          "out": str(Path(cfg.out) / f"seed_{s}")})
                sub.validate()
                jobs.append((verb, sub))
            workers = min(len(jobs), os.cpu_count() or 1)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                list(pool.map(_run_seed, jobs))
        else:
            _run_one(verb, cfg)
    except (ConfigError, MdpError, HeError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NonConvergenceError, generic_rl.NonConvergenceError, DegenerateSystemError) as exc:
        log.error("convergence failure: %s", exc)
        return EXIT_CONVERGENCE
    except (SessionAborted, SessionFailed, TransportError) as exc:
        log.error("session failure: %s", exc)
        return EXIT_SESSION
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return run(args.verb, cfg)


if __name__ == "__main__":
    sys.exit(main())
