"""Wire messages of the synthesis protocol.

Frame: 4-byte big-endian body length, then the body. Body: 1-byte variant
tag, 8-byte session id, 8-byte sequence number (both little-endian), then the
variant payload with little-endian integers and ciphertexts in the
``encsynth.he`` framed format.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from ..he.core import (RLWE, CipherValue, FormatError, HeProfile, deserialize_cipher,
                       serialize_cipher)
from ..he.poly import ExpApproxConfig

ABS = 0xFFFFFFFF          # successor marker: absorbing state
FACTOR_ID = 0xFFFFFFFE    # refresh entry id for the pending e^{-c/lambda} factor

TAG_INIT, TAG_TRANSITION, TAG_REFRESH_REQ, TAG_REFRESH_RESP = 1, 2, 3, 4
TAG_TABLE_REQ, TAG_FINAL_TABLE, TAG_ERROR, TAG_ACK = 5, 6, 7, 8

E_MALFORMED, E_STATE, E_UNKNOWN_STATE, E_SEQUENCE, E_HE, E_UNEXPECTED = 1, 2, 3, 4, 5, 6


class ProtocolError(Exception):
    """Malformed bytes; ``offset`` locates the problem within the frame body."""

    def __init__(self, detail: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{detail} (offset {offset})")


@dataclass
class Message:
    session_id: int = 0
    seq: int = 0


@dataclass
class SessionInit(Message):
    backend: int = 0
    profile: HeProfile = field(default_factory=HeProfile)
    exp_config: ExpApproxConfig = field(default_factory=ExpApproxConfig)
    kappa: float = 1000.0
    table_scale: float = 1.0
    eval_key: bytes = b""
    table: list = field(default_factory=list)   # [(state id, CipherValue)]
    counts: list = field(default_factory=list)  # visit counts aligned with table


@dataclass
class Transition(Message):
    episode: int = 0
    step: int = 0
    x: int = 0
    x_next: int = 0
    enc_cost: CipherValue | None = None


@dataclass
class RefreshRequest(Message):
    entries: list = field(default_factory=list)  # [(id, CipherValue)]


@dataclass
class RefreshResponse(Message):
    entries: list = field(default_factory=list)


@dataclass
class TableRequest(Message):
    pass


@dataclass
class FinalTable(Message):
    entries: list = field(default_factory=list)
    metrics: bytes = b"{}"

    def metrics_dict(self) -> dict:
        return json.loads(self.metrics)


@dataclass
class Error(Message):
    code: int = 0
    detail: str = ""


@dataclass
class Ack(Message):
    pass


_HEAD = struct.Struct("<BQQ")


def _pack_blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def _pack_entries(entries) -> bytes:
    out = [struct.pack("<I", len(entries))]
    for i, c in entries:
        out.append(struct.pack("<I", i))
        out.append(serialize_cipher(c))
    return b"".join(out)


def _payload(m: Message) -> tuple[int, bytes]:
    if isinstance(m, SessionInit):
        if len(m.counts) != len(m.table):
            raise ValueError("counts must align with the table")
        body = (struct.pack("<B", m.backend) + m.profile.pack()
                + _pack_blob(m.exp_config.to_json())
                + struct.pack("<dd", m.kappa, m.table_scale)
                + _pack_blob(m.eval_key) + _pack_entries(m.table)
                + struct.pack(f"<{len(m.counts)}Q", *m.counts))
        return TAG_INIT, body
    if isinstance(m, Transition):
        if m.enc_cost is None:
            raise ValueError("transition without a cost ciphertext")
        return TAG_TRANSITION, (struct.pack("<IIII", m.episode, m.step, m.x, m.x_next)
                                + serialize_cipher(m.enc_cost))
    if isinstance(m, RefreshRequest):
        return TAG_REFRESH_REQ, _pack_entries(m.entries)
    if isinstance(m, RefreshResponse):
        return TAG_REFRESH_RESP, _pack_entries(m.entries)
    if isinstance(m, TableRequest):
        return TAG_TABLE_REQ, b""
    if isinstance(m, FinalTable):
        return TAG_FINAL_TABLE, _pack_entries(m.entries) + _pack_blob(m.metrics)
    if isinstance(m, Error):
        return TAG_ERROR, struct.pack("<H", m.code) + _pack_blob(m.detail.encode())
    if isinstance(m, Ack):
        return TAG_ACK, b""
    raise TypeError(f"not a protocol message: {m!r}")


def serialize_message(m: Message) -> bytes:
    """Message body (tag, session id, sequence number, payload)."""
    tag, body = _payload(m)
    return _HEAD.pack(tag, m.session_id, m.seq) + body


def frame(body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + body


def unframe(data: bytes) -> bytes:
    if len(data) < 4:
        raise ProtocolError("truncated frame length", 0)
    (n,) = struct.unpack_from(">I", data)
    if len(data) - 4 != n:
        raise ProtocolError(f"frame declares {n} bytes, carries {len(data) - 4}", 0)
    return bytes(data[4:])


class _Reader:
    def __init__(self, buf: bytes, offset: int):
        self.buf = buf
        self.off = offset

    def take(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.buf, self.off)
        except struct.error:
            raise ProtocolError("truncated field", self.off) from None
        self.off += struct.calcsize(fmt)
        return vals

    def blob(self) -> bytes:
        (n,) = self.take("<I")
        if len(self.buf) - self.off < n:
            raise ProtocolError("truncated blob", self.off)
        b = self.buf[self.off:self.off + n]
        self.off += n
        return bytes(b)

    def cipher(self) -> CipherValue:
        try:
            c, self.off = deserialize_cipher(self.buf, self.off)
        except FormatError as exc:
            raise ProtocolError(f"bad ciphertext: {exc}", self.off) from None
        return c

    def entries(self) -> list:
        (n,) = self.take("<I")
        if n > len(self.buf):
            raise ProtocolError("entry count exceeds frame", self.off)
        out = []
        for _ in range(n):
            (i,) = self.take("<I")
            out.append((i, self.cipher()))
        return out

    def done(self) -> None:
        if self.off != len(self.buf):
            raise ProtocolError("trailing bytes", self.off)


def _register_rlwe_params(eval_key: bytes) -> None:
    # RLWE ciphertexts reference their parameter set by hash; importing the
    # evaluator registers their payload codec (it holds no secret material)
    from ..rlwe import evaluator  # noqa: F401
    from ..rlwe.scheme import KEY_MAGIC

    if eval_key[:4] == KEY_MAGIC:
        from ..rlwe.params import RlweParams

        RlweParams.unpack(eval_key, 4)


def deserialize_message(body: bytes) -> Message:
    r = _Reader(bytes(body), 0)
    tag, sid, seq = r.take("<BQQ")
    try:
        if tag == TAG_INIT:
            (backend,) = r.take("<B")
            try:
                profile, r.off = HeProfile.unpack(r.buf, r.off)
            except FormatError as exc:
                raise ProtocolError(str(exc), r.off) from None
            cfg_off = r.off
            try:
                cfg = ExpApproxConfig.from_json(r.blob())
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(f"bad exp config: {exc}", cfg_off) from None
            kappa, scale = r.take("<dd")
            key = r.blob()
            if backend == RLWE:
                try:
                    _register_rlwe_params(key)
                except Exception as exc:
                    raise ProtocolError(f"bad evaluation key: {exc}", r.off) from None
            table = r.entries()
            counts = list(r.take(f"<{len(table)}Q"))
            m = SessionInit(sid, seq, backend, profile, cfg, kappa, scale, key, table, counts)
        elif tag == TAG_TRANSITION:
            ep, st, x, xn = r.take("<IIII")
            m = Transition(sid, seq, ep, st, x, xn, r.cipher())
        elif tag == TAG_REFRESH_REQ:
            m = RefreshRequest(sid, seq, r.entries())
        elif tag == TAG_REFRESH_RESP:
            m = RefreshResponse(sid, seq, r.entries())
        elif tag == TAG_TABLE_REQ:
            m = TableRequest(sid, seq)
        elif tag == TAG_FINAL_TABLE:
            m = FinalTable(sid, seq, r.entries(), r.blob())
        elif tag == TAG_ERROR:
            (code,) = r.take("<H")
            off = r.off
            try:
                detail = r.blob().decode()
            except UnicodeDecodeError:
                raise ProtocolError("error detail is not UTF-8", off) from None
            m = Error(sid, seq, code, detail)
        elif tag == TAG_ACK:
            m = Ack(sid, seq)
        else:
            raise ProtocolError(f"unknown message tag {tag}", 0)
    except ProtocolError:
        raise
    except (ValueError, OverflowError) as exc:
        raise ProtocolError(f"invalid field: {exc}", r.off) from None
    r.done()
    return m
