"""Server endpoint: holds only ciphertexts and runs encrypted Z-learning.

This module (and everything it imports) must stay free of secret-key code:
it never imports ``encsynth.he.keys`` or ``encsynth.rlwe.secret``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from ..he.backends import make_evaluator
from ..he.core import CipherValue, HeError, LevelExhausted, deserialize_cipher, serialize_cipher
from ..he.poly import ExpApproxConfig, encrypted_z_update, exp_neg_scaled, z_update_shortfall
from .messages import (ABS, E_HE, E_MALFORMED, E_SEQUENCE, E_STATE, E_UNEXPECTED,
                       E_UNKNOWN_STATE, FACTOR_ID, Ack, Error, FinalTable, Message,
                       ProtocolError, RefreshRequest, RefreshResponse, SessionInit,
                       TableRequest, Transition, deserialize_message, frame,
                       serialize_message, unframe)


class ServerError(Exception):
    def __init__(self, code: int, detail: str):
        self.code = code
        super().__init__(detail)


@dataclass
class Pending:
    x: int
    x_next: int
    alpha: float
    factor: CipherValue


@dataclass
class SessionState:
    session_id: int
    evaluator: object
    exp_config: ExpApproxConfig
    kappa: float
    table_scale: float
    table: dict                      # state id -> CipherValue
    counts: dict                     # state id -> visits
    metrics: dict = field(default_factory=lambda: {
        "updates": 0, "refresh_rounds": 0, "refreshed_entries": 0,
        "bytes_in": 0, "bytes_out": 0, "messages_in": 0, "messages_out": 0,
        "depth_log": {"exp_neg_scaled": 0, "z_update": 0, "z_update_absorbing": 0}})
    pending: Pending | None = None
    last_seq: int = -1


class SynthServer:
    """Message handler: one reply frame per request frame."""

    def __init__(self):
        self.state: SessionState | None = None
        self._out_seq = 0

    # ---- framing -----------------------------------------------------------
    def handle_frame(self, data: bytes) -> bytes:
        sid = self.state.session_id if self.state else 0
        try:
            msg = deserialize_message(unframe(data))
        except ProtocolError as exc:
            reply = Error(sid, 0, E_MALFORMED, str(exc))
        else:
            try:
                reply = self.handle(msg)
            except ServerError as exc:
                reply = Error(msg.session_id, 0, exc.code, str(exc))
            except HeError as exc:
                if self.state is not None:
                    self.state.pending = None
                reply = Error(msg.session_id, 0, E_HE, f"{type(exc).__name__}: {exc}")
        reply.seq = self._out_seq
        self._out_seq += 1
        out = frame(serialize_message(reply))
        if self.state is not None:
            m = self.state.metrics
            m["bytes_in"] += len(data)
            m["bytes_out"] += len(out)
            m["messages_in"] += 1
            m["messages_out"] += 1
        return out

    # ---- dispatch ----------------------------------------------------------
    def handle(self, msg: Message) -> Message:
        if isinstance(msg, SessionInit):
            return self._init(msg)
        st = self.state
        if st is None:
            raise ServerError(E_STATE, "session not initialized")
        if msg.session_id != st.session_id:
            raise ServerError(E_STATE, f"unknown session {msg.session_id}")
        if msg.seq <= st.last_seq:
            raise ServerError(E_SEQUENCE, f"sequence {msg.seq} not after {st.last_seq}")
        st.last_seq = msg.seq
        if isinstance(msg, Transition):
            return self._transition(msg)
        if isinstance(msg, RefreshResponse):
            return self._refreshed(msg)
        if isinstance(msg, TableRequest):
            return FinalTable(st.session_id, 0, sorted(st.table.items()), self.metrics_json())
        raise ServerError(E_UNEXPECTED, f"unexpected {type(msg).__name__}")

    def _init(self, msg: SessionInit) -> Message:
        try:
            ev = make_evaluator(msg.backend, msg.profile, msg.eval_key)
        except (ValueError, KeyError, HeError) as exc:
            raise ServerError(E_HE, f"cannot build evaluator: {exc}") from None
        if msg.exp_config.depth > ev.fresh_level:
            raise ServerError(E_HE, f"exp approximation needs {msg.exp_config.depth} levels, "
                                    f"profile offers {ev.fresh_level}")
        for _, c in msg.table:
            if c.backend != ev.tag:
                raise ServerError(E_HE, "table ciphertext from a different backend")
        self.state = SessionState(msg.session_id, ev, msg.exp_config, msg.kappa,
                                  msg.table_scale, dict(msg.table),
                                  {i: int(n) for (i, _), n in zip(msg.table, msg.counts)},
                                  last_seq=msg.seq)
        return Ack(msg.session_id, 0)

    def _transition(self, msg: Transition) -> Message:
        st = self.state
        if st.pending is not None:
            raise ServerError(E_UNEXPECTED, "transition while a refresh is outstanding")
        x, xn = msg.x, msg.x_next
        if x not in st.table or (xn != ABS and xn not in st.table):
            raise ServerError(E_UNKNOWN_STATE, f"unknown state id in transition {x}->{xn}")
        if msg.enc_cost is None or msg.enc_cost.backend != st.evaluator.tag:
            raise ServerError(E_HE, "cost ciphertext from a different backend")
        n = st.counts[x]
        alpha = st.kappa / (st.kappa + n)
        try:
            factor = exp_neg_scaled(st.evaluator, msg.enc_cost, st.exp_config)
        except LevelExhausted as exc:
            raise ServerError(E_HE, f"cost ciphertext lacks depth: {exc}") from None
        st.counts[x] = n + 1
        st.metrics["depth_log"]["exp_neg_scaled"] += st.exp_config.depth
        st.pending = Pending(x, xn, alpha, factor)
        return self._apply_or_request()

    def _operands(self, p: Pending):
        st = self.state
        z_next = st.table_scale if p.x_next == ABS else st.table[p.x_next]
        return st.table[p.x], z_next

    def _apply_or_request(self) -> Message:
        st = self.state
        p = st.pending
        z_x, z_next = self._operands(p)
        short = z_update_shortfall(z_x, z_next, p.factor)
        if not short:
            try:
                st.table[p.x] = encrypted_z_update(st.evaluator, z_x, z_next, p.factor, p.alpha)
            except LevelExhausted:
                short = ["factor", "z_x"] + (["z_next"] if p.x_next != ABS else [])
            else:
                kind = "z_update_absorbing" if p.x_next == ABS else "z_update"
                st.metrics["depth_log"][kind] += 1 if p.x_next == ABS else 2
                st.metrics["updates"] += 1
                st.pending = None
                return Ack(st.session_id, 0)
        ids = {"factor": FACTOR_ID, "z_x": p.x, "z_next": p.x_next}
        wanted = []
        for name in short:
            i = ids[name]
            if i not in wanted:
                wanted.append(i)
        entries = [(i, p.factor if i == FACTOR_ID else st.table[i]) for i in wanted]
        st.metrics["refresh_rounds"] += 1
        st.metrics["refreshed_entries"] += len(entries)
        return RefreshRequest(st.session_id, 0, entries)

    def _refreshed(self, msg: RefreshResponse) -> Message:
        st = self.state
        p = st.pending
        if p is None:
            raise ServerError(E_UNEXPECTED, "refresh response without a pending update")
        for i, c in msg.entries:
            if c.backend != st.evaluator.tag:
                raise ServerError(E_HE, "refreshed ciphertext from a different backend")
            if i == FACTOR_ID:
                p.factor = c
            elif i in st.table:
                st.table[i] = c
            else:
                raise ServerError(E_UNKNOWN_STATE, f"unknown state id {i} in refresh")
        z_x, z_next = self._operands(p)
        if z_update_shortfall(z_x, z_next, p.factor):
            raise ServerError(E_HE, "refreshed operands still lack depth")
        reply = self._apply_or_request()
        if isinstance(reply, RefreshRequest):
            raise ServerError(E_HE, "update failed after refresh")
        return reply

    # ---- reporting and checkpointing --------------------------------------
    def metrics_json(self) -> bytes:
        st = self.state
        m = dict(st.metrics)
        m["visit_counts"] = {str(i): n for i, n in sorted(st.counts.items())}
        m["levels"] = {str(i): c.level for i, c in sorted(st.table.items())}
        return json.dumps(m, sort_keys=True).encode()


def serialize_table(entries) -> bytes:
    out = [struct.pack("<I", len(entries))]
    for i, c in entries:
        out.append(struct.pack("<I", i) + serialize_cipher(c))
    return b"".join(out)


def deserialize_table(buf: bytes) -> list:
    (n,) = struct.unpack_from("<I", buf)
    off = 4
    out = []
    for _ in range(n):
        (i,) = struct.unpack_from("<I", buf, off)
        c, off = deserialize_cipher(buf, off + 4)
        out.append((i, c))
    return out
