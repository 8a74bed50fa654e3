"""Client endpoint: key holder and environment simulator.

The client draws episodes under the behavior policy, streams encrypted costs
to the server, answers refresh requests by decrypting and re-encrypting, and
finally decrypts the learned table. Its random stream is consumed exactly as
in :func:`encsynth.re_rl.z_learning_run` (one spawn draw plus ``max_steps``
uniforms per episode), so a session replays the plaintext run step for step.
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass, field

import numpy as np

from ..he.keys import ClientBackend
from ..he.poly import ExpApproxConfig, depth_required
from ..mdp import policy_cdf, simulate_episode, spawn_state
from ..re_rl import ReProblem, boltzmann_policy, normalized_error
from .messages import (ABS, FACTOR_ID, Ack, Error, FinalTable, Message, RefreshRequest,
                       RefreshResponse, SessionInit, TableRequest, Transition,
                       deserialize_message, frame, serialize_message, unframe)
from .errors import SessionAborted, SessionFailed
from .server import deserialize_table, serialize_table
from .transport import Transcript, Transport, TransportError

DEFAULT_TABLE_SCALE = 2.0**16
POSITIVITY_FLOOR = 1e-12


@dataclass
class SessionConfig:
    episodes: int
    max_steps: int = 200
    kappa: float = 1000.0
    exp_config: ExpApproxConfig = field(default_factory=ExpApproxConfig)
    table_scale: float = DEFAULT_TABLE_SCALE
    checkpoints: tuple = ()
    checkpoint_every: int = 1
    session_id: int = 1


@dataclass
class Checkpoint:
    episode: int
    rng_state: dict
    table: bytes
    counts: list
    errors: list
    snapshots: dict
    server_metrics: dict

    def to_json(self) -> str:
        return json.dumps({
            "episode": self.episode, "rng_state": self.rng_state,
            "table": base64.b64encode(self.table).decode(), "counts": self.counts,
            "errors": self.errors,
            "snapshots": {str(k): list(map(float, v)) for k, v in self.snapshots.items()},
            "server_metrics": self.server_metrics}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        d = json.loads(text)
        return cls(d["episode"], d["rng_state"], base64.b64decode(d["table"]), d["counts"],
                   d["errors"], {int(k): np.array(v) for k, v in d["snapshots"].items()},
                   d["server_metrics"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass
class SessionResult:
    z: np.ndarray
    errors: list
    snapshots: dict
    metrics: dict
    transcript: Transcript
    checkpoint: Checkpoint | None = None


class SynthClient:
    def __init__(self, backend: ClientBackend, problem: ReProblem, config: SessionConfig,
                 transport: Transport, transcript: Transcript | None = None):
        if abs(config.exp_config.lam - problem.lam) > 1e-15:
            raise ValueError("exp approximation lambda differs from the problem's")
        self.backend = backend
        self.problem = problem
        self.config = config
        self.transport = transport
        self.transcript = transcript or Transcript()
        self.seq = 0
        self.refresh_rounds = 0
        self.transitions = 0

    # ---- messaging ---------------------------------------------------------
    def send(self, msg: Message) -> Message:
        msg.session_id = self.config.session_id
        msg.seq = self.seq
        self.seq += 1
        data = frame(serialize_message(msg))
        self.transcript.record(b">", data)
        reply_bytes = self.transport.exchange(data)
        self.transcript.record(b"<", reply_bytes)
        reply = deserialize_message(unframe(reply_bytes))
        if isinstance(reply, Error):
            raise SessionFailed(reply.code, reply.detail)
        return reply

    def _expect(self, reply: Message, kind) -> Message:
        if not isinstance(reply, kind):
            raise SessionFailed(0, f"expected {kind.__name__}, got {type(reply).__name__}")
        return reply

    # ---- protocol steps ----------------------------------------------------
    def initialize(self, table: list | None = None, counts: list | None = None) -> None:
        mdp = self.problem.mdp
        ids = [int(i) for i in mdp.nonabsorbing]
        if table is None:
            k = self.config.table_scale
            table = [(i, self.backend.encrypt(k)) for i in ids]
            counts = [0] * len(ids)
        init = SessionInit(backend=self.backend.tag, profile=self.backend.profile,
                           exp_config=self.config.exp_config, kappa=self.config.kappa,
                           table_scale=self.config.table_scale,
                           eval_key=self.backend.eval_key(), table=table, counts=counts)
        self._expect(self.send(init), Ack)

    def refresh(self, req: RefreshRequest) -> RefreshResponse:
        self.refresh_rounds += 1
        return RefreshResponse(entries=[(i, self.backend.refresh(c)) for i, c in req.entries])

    def transition(self, episode: int, step: int, x: int, cost: float, x_next: int) -> None:
        msg = Transition(episode=episode, step=step, x=x, x_next=x_next,
                         enc_cost=self.backend.encrypt(float(cost)))
        reply = self.send(msg)
        if isinstance(reply, RefreshRequest):
            reply = self.send(self.refresh(reply))
        self._expect(reply, Ack)
        self.transitions += 1

    def fetch_table(self) -> tuple[np.ndarray, dict, list]:
        """Decrypted desirabilities (absorbing entries 1), server metrics, raw entries."""
        reply = self._expect(self.send(TableRequest()), FinalTable)
        z = np.ones(self.problem.mdp.num_states)
        k = self.config.table_scale
        for i, c in reply.entries:
            z[i] = self.backend.decrypt(c) / k
        return z, reply.metrics_dict(), reply.entries


def clamp_desirability(z: np.ndarray, floor: float = POSITIVITY_FLOOR) -> np.ndarray:
    """Raise every entry to at least ``floor`` (policy extraction)."""
    return np.maximum(np.asarray(z, dtype=float), floor)


def session_value(z: np.ndarray, lam: float, floor: float = POSITIVITY_FLOOR) -> np.ndarray:
    """-lam ln Z with only non-positive (noise-corrupted) entries replaced by ``floor``.

    Genuine desirabilities below the floor are kept, so an exact-backend
    session reports the same values as plaintext Z-learning.
    """
    z = np.asarray(z, dtype=float)
    return -lam * np.log(np.where(z > 0, z, floor))


def run_session(problem: ReProblem, backend: ClientBackend, transport: Transport,
                config: SessionConfig, rng: np.random.Generator,
                v_star: np.ndarray | None = None, resume: Checkpoint | None = None,
                transcript: Transcript | None = None) -> SessionResult:
    """Run (or resume) an encrypted Z-learning session; see module docstring."""
    mdp = problem.mdp
    lam = problem.lam
    nonabs = mdp.nonabsorbing
    cdf = policy_cdf(problem.behavior)
    client = SynthClient(backend, problem, config, transport, transcript)
    checkpoints = set(config.checkpoints)
    start = time.perf_counter()
    if resume is None:
        first, errors, snapshots, counts, table = 1, [], {}, None, None
        if 0 in checkpoints:
            snapshots[0] = np.ones(mdp.num_states)
    else:
        rng.bit_generator.state = resume.rng_state
        first = resume.episode + 1
        errors, snapshots = list(resume.errors), dict(resume.snapshots)
        table, counts = deserialize_table(resume.table), list(resume.counts)
    last_ckpt = resume
    server_metrics: dict = {}
    try:
        client.initialize(table, counts)
        for k in range(first, config.episodes + 1):
            x0 = spawn_state(mdp, rng)
            ep = simulate_episode(mdp, problem.behavior, x0, config.max_steps, rng, cdf)
            for t, (x, _, c, xn) in enumerate(ep.transitions()):
                client.transition(k, t, x, c, ABS if xn in mdp.absorbing else xn)
            want_ckpt = config.checkpoint_every and k % config.checkpoint_every == 0
            if v_star is not None or k in checkpoints or want_ckpt or k == config.episodes:
                z, server_metrics, entries = client.fetch_table()
                if v_star is not None:
                    errors.append(normalized_error(v_star, session_value(z, lam), nonabs))
                if k in checkpoints:
                    snapshots[k] = z
                if want_ckpt:
                    vc = server_metrics["visit_counts"]
                    last_ckpt = Checkpoint(k, rng.bit_generator.state, serialize_table(entries),
                                           [vc[str(i)] for i, _ in entries], list(errors),
                                           dict(snapshots), server_metrics)
        z, server_metrics, _ = client.fetch_table()
    except (TransportError, OSError) as exc:
        raise SessionAborted(f"transport lost: {exc}", last_ckpt) from None
    metrics = dict(server_metrics)
    metrics.pop("levels", None)
    metrics.update({
        "transitions": client.transitions, "client_refresh_rounds": client.refresh_rounds,
        "frames": client.transcript.frames, "bytes_sent": client.transcript.bytes_sent,
        "bytes_received": client.transcript.bytes_received,
        "transcript_sha256": client.transcript.hexdigest(),
        "wall_time_s": time.perf_counter() - start})
    return SessionResult(z, errors, snapshots, metrics, client.transcript, last_ckpt)


def session_transitions(problem: ReProblem, episodes: int, max_steps: int,
                        rng: np.random.Generator) -> list:
    """The (x, x_next) sequence a session with this rng streams (ABS marks absorption)."""
    mdp = problem.mdp
    cdf = policy_cdf(problem.behavior)
    out = []
    for _ in range(episodes):
        ep = simulate_episode(mdp, problem.behavior, spawn_state(mdp, rng), max_steps, rng, cdf)
        out.extend((x, ABS if xn in mdp.absorbing else xn) for x, _, _, xn in ep.transitions())
    return out


def predict_refreshes(transitions, fresh_level: int, exp_config: ExpApproxConfig) -> dict:
    """Refresh rounds and refreshed entries implied by the documented depth
    budget for a sequence of (x, x_next) transitions (x_next = ABS allowed)."""
    d_exp = depth_required(exp_config)
    d_upd = depth_required("z_update")
    d_abs = depth_required("z_update_absorbing")
    levels: dict = {}
    rounds = entries = 0
    for x, xn in transitions:
        f = fresh_level - d_exp
        zx = levels.get(x, fresh_level)
        need = set()
        if xn == ABS:
            if f < d_abs:
                need.add(FACTOR_ID)
        else:
            if f < d_upd:
                need.add(FACTOR_ID)
            if levels.get(xn, fresh_level) < d_upd:
                need.add(xn)
        if zx < 1:
            need.add(x)
        if need:
            rounds += 1
            entries += len(need)
            if FACTOR_ID in need:
                f = fresh_level
            for i in need - {FACTOR_ID}:
                levels[i] = fresh_level
            zx = levels.get(x, fresh_level)
        if xn == ABS:
            levels[x] = min(f - d_abs, zx - 1)
        else:
            levels[x] = min(f - d_upd, levels.get(xn, fresh_level) - d_upd, zx - 1)
    return {"refresh_rounds": rounds, "refreshed_entries": entries}


def extract_policy_at_client(z: np.ndarray, problem: ReProblem,
                             floor: float = POSITIVITY_FLOOR) -> np.ndarray:
    """Boltzmann policy from a decrypted table after clamping to ``floor``."""
    return boltzmann_policy(problem, clamp_desirability(z, floor))

