"""Ciphertext values, HE profiles, faults and the shared evaluator contract.

Every backend evaluator derives from :class:`Evaluator`, which owns the
scale/level bookkeeping and delegates payload arithmetic to a handful of
hooks. Ciphertext values are immutable; each operation returns a new one.
"""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

EXACT, EMULATOR, RLWE = 0, 1, 2
BACKEND_NAMES = {EXACT: "exact", EMULATOR: "emulator", RLWE: "rlwe"}
BACKEND_TAGS = {v: k for k, v in BACKEND_NAMES.items()}

# fresh level of exact ciphertexts: the exact backend never runs out of depth
UNBOUNDED_LEVEL = 2**31 - 1
PLAINTEXT_BOUND = 2.0**20


class HeError(Exception):
    pass


class LevelExhausted(HeError):
    """A multiplication (or rescale) was attempted without remaining depth."""

    def __init__(self, op: str, level: int, trace=()):
        self.op = op
        self.level = level
        self.trace = tuple(trace)
        super().__init__(f"{op} at level {level}: no multiplicative depth left")


class ScaleMismatch(HeError):
    pass


class LevelMismatch(HeError):
    pass


class BackendMismatch(HeError):
    pass


class PlaintextBoundError(HeError, ValueError):
    pass


class FormatError(HeError, ValueError):
    pass


@dataclass(frozen=True)
class HeProfile:
    ring_dimension: int = 2**14
    chain_bits: tuple = (60, 30, 30, 30, 30, 60)
    log2_scale: int = 40

    def __post_init__(self):
        object.__setattr__(self, "chain_bits", tuple(int(b) for b in self.chain_bits))
        n = self.ring_dimension
        if n < 2 or n & (n - 1):
            raise ValueError("ring_dimension must be a power of two")
        if len(self.chain_bits) < 3:
            raise ValueError("modulus chain needs at least 3 primes")
        if self.log2_scale < 20:
            raise ValueError("scale must be at least 2^20")

    @property
    def usable_levels(self) -> int:
        return len(self.chain_bits) - 2

    @property
    def scale(self) -> float:
        return 2.0**self.log2_scale

    @property
    def slots(self) -> int:
        return self.ring_dimension // 2

    def to_dict(self) -> dict:
        return {"ring_dimension": self.ring_dimension,
                "chain_bits": list(self.chain_bits),
                "log2_scale": self.log2_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "HeProfile":
        return cls(int(d["ring_dimension"]), tuple(d["chain_bits"]), int(d["log2_scale"]))

    def pack(self) -> bytes:
        return struct.pack(f"<IIB{len(self.chain_bits)}B", self.ring_dimension,
                           self.log2_scale, len(self.chain_bits), *self.chain_bits)

    @classmethod
    def unpack(cls, buf: bytes, offset: int = 0) -> tuple["HeProfile", int]:
        try:
            n, ls, k = struct.unpack_from("<IIB", buf, offset)
            bits = struct.unpack_from(f"<{k}B", buf, offset + 9)
            return cls(n, bits, ls), offset + 9 + k
        except (struct.error, ValueError) as exc:
            raise FormatError(f"bad profile block at offset {offset}: {exc}") from None


DEFAULT_PROFILE = HeProfile()


class CipherValue(NamedTuple):
    """An encrypted real scalar or slot vector (immutable).

    ``log2_scale`` is the canonical scale representation (it round-trips
    bit-exactly through serialization); ``scale`` is derived from it.
    """

    payload: object
    log2_scale: float
    level: int
    backend: int

    @property
    def scale(self) -> float:
        return 2.0**self.log2_scale

    def __repr__(self):
        return (f"CipherValue({BACKEND_NAMES.get(self.backend, self.backend)}, "
                f"level={self.level}, log2_scale={self.log2_scale:.6f})")


# payload codecs: tag -> (encode(CipherValue) -> bytes, decode(bytes) -> payload)
_CODECS: dict = {}


def register_codec(tag: int, encode, decode) -> None:
    _CODECS[tag] = (encode, decode)


def _encode_float_payload(c) -> bytes:
    p = c.payload
    if isinstance(p, np.ndarray):
        return b"\x01" + np.ascontiguousarray(p, dtype="<f8").tobytes()
    return b"\x00" + struct.pack("<d", p)


def _decode_float_payload(b: bytes):
    if not b:
        raise FormatError("empty payload")
    if b[0] == 0 and len(b) == 9:
        return struct.unpack("<d", b[1:])[0]
    if b[0] == 1 and (len(b) - 1) % 8 == 0:
        return np.frombuffer(b[1:], dtype="<f8").astype(float)
    raise FormatError("malformed float payload")


register_codec(EXACT, _encode_float_payload, _decode_float_payload)
register_codec(EMULATOR, _encode_float_payload, _decode_float_payload)

_HEADER = struct.Struct("<BdII")


def serialize_cipher(c: CipherValue) -> bytes:
    """1-byte backend tag, 8-byte LE scale exponent (float64 log2), 4-byte
    level, 4-byte payload length, payload."""
    try:
        encode = _CODECS[c.backend][0]
    except KeyError:
        raise FormatError(f"no codec for backend {c.backend}") from None
    body = encode(c)
    return _HEADER.pack(c.backend, c.log2_scale, c.level, len(body)) + body


def deserialize_cipher(buf: bytes, offset: int = 0) -> tuple[CipherValue, int]:
    if len(buf) - offset < _HEADER.size:
        raise FormatError(f"truncated ciphertext header at offset {offset}")
    tag, log2_scale, level, n = _HEADER.unpack_from(buf, offset)
    start = offset + _HEADER.size
    if len(buf) - start < n:
        raise FormatError(f"truncated ciphertext payload at offset {start}")
    if tag not in _CODECS:
        raise FormatError(f"unknown backend tag {tag} at offset {offset}")
    if not math.isfinite(log2_scale) or log2_scale <= 0:
        raise FormatError(f"invalid scale exponent at offset {offset}")
    try:
        payload = _CODECS[tag][1](bytes(buf[start:start + n]))
    except FormatError:
        raise
    except Exception as exc:  # backend-specific parse failures
        raise FormatError(f"bad payload at offset {start}: {exc}") from None
    return CipherValue(payload, log2_scale, level, tag), start + n


def check_plaintext(value):
    if isinstance(value, (float, int)):
        if not abs(value) <= PLAINTEXT_BOUND:  # also rejects NaN
            raise PlaintextBoundError("plaintext magnitude exceeds 2^20")
        return value
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > PLAINTEXT_BOUND):
        raise PlaintextBoundError("plaintext magnitude exceeds 2^20")
    return value


class Evaluator:
    """Public (key-free) homomorphic evaluator with scale/level bookkeeping.

    Subclasses implement the payload hooks ``_add``, ``_neg``, ``_add_plain``,
    ``_mul``, ``_mul_plain``, ``_rescale`` and ``_drop`` plus the scale
    arithmetic hooks ``plain_log2_scale`` and ``rescale_log2``.
    """

    tag: int = -1
    scale_rtol: float = 0.0
    trace_length = 16

    def __init__(self, profile: HeProfile):
        self.profile = profile
        self.log2_delta = float(profile.log2_scale)
        self.trace = deque(maxlen=self.trace_length)

    @property
    def name(self) -> str:
        return BACKEND_NAMES[self.tag]

    @property
    def fresh_level(self) -> int:
        return self.profile.usable_levels

    # ---- scale hooks -------------------------------------------------
    def plain_log2_scale(self, c: CipherValue) -> float:
        return self.log2_delta

    def rescale_log2(self, level: int) -> float:
        return self.log2_delta

    # ---- checks -------------------------------------------------------
    def _own(self, c: CipherValue) -> None:
        if c.backend != self.tag:
            raise BackendMismatch(f"{BACKEND_NAMES.get(c.backend)} ciphertext "
                                  f"given to {self.name} evaluator")

    def scales_match(self, a: float, b: float) -> bool:
        if a == b:
            return True
        return abs(a - b) <= self.scale_rtol / math.log(2)

    def _same(self, a: CipherValue, b: CipherValue, op: str) -> None:
        if a.backend != self.tag or b.backend != self.tag:
            self._own(a)
            self._own(b)
        if a.level != b.level:
            raise LevelMismatch(f"{op}: levels {a.level} and {b.level} differ; align first")
        if not self.scales_match(a.log2_scale, b.log2_scale):
            raise ScaleMismatch(f"{op}: scales 2^{a.log2_scale} and 2^{b.log2_scale} differ")

    def _exhausted(self, op: str, level: int):
        self.trace.append((op, level))
        return LevelExhausted(op, level, self.trace)

    # ---- operations ----------------------------------------------------
    def add(self, a: CipherValue, b: CipherValue) -> CipherValue:
        self._same(a, b, "add")
        self.trace.append(("add", a.level))
        return CipherValue(self._add(a, b), a.log2_scale, a.level, self.tag)

    def sub(self, a: CipherValue, b: CipherValue) -> CipherValue:
        self._same(a, b, "sub")
        self.trace.append(("sub", a.level))
        return CipherValue(self._add(a, CipherValue(self._neg(b), b.log2_scale, b.level, self.tag)),
                           a.log2_scale, a.level, self.tag)

    def negate(self, a: CipherValue) -> CipherValue:
        if a.backend != self.tag:
            self._own(a)
        return CipherValue(self._neg(a), a.log2_scale, a.level, self.tag)

    def add_plain(self, a: CipherValue, p) -> CipherValue:
        if a.backend != self.tag:
            self._own(a)
        self.trace.append(("add_plain", a.level))
        return CipherValue(self._add_plain(a, p), a.log2_scale, a.level, self.tag)

    def mul(self, a: CipherValue, b: CipherValue) -> CipherValue:
        if a.backend != self.tag:
            self._own(a)
        if b.backend != self.tag:
            self._own(b)
        if a.level != b.level:
            raise LevelMismatch(f"mul: levels {a.level} and {b.level} differ; align first")
        if a.level < 1:
            raise self._exhausted("mul", a.level)
        self.trace.append(("mul", a.level))
        return CipherValue(self._mul(a, b), a.log2_scale + b.log2_scale, a.level, self.tag)

    def mul_plain(self, a: CipherValue, p) -> CipherValue:
        if a.backend != self.tag:
            self._own(a)
        if a.level < 1:
            raise self._exhausted("mul_plain", a.level)
        self.trace.append(("mul_plain", a.level))
        ps = self.plain_log2_scale(a)
        return CipherValue(self._mul_plain(a, p, ps), a.log2_scale + ps, a.level, self.tag)

    def rescale(self, a: CipherValue) -> CipherValue:
        if a.backend != self.tag:
            self._own(a)
        if a.level < 1:
            raise self._exhausted("rescale", a.level)
        if not abs(a.log2_scale - 2 * self.log2_delta) <= 1e-3:
            raise ScaleMismatch(f"rescale expects scale ~ Delta^2, got 2^{a.log2_scale}")
        self.trace.append(("rescale", a.level))
        return CipherValue(self._rescale(a), a.log2_scale - self.rescale_log2(a.level),
                           a.level - 1, self.tag)

    def align(self, a: CipherValue, level: int) -> CipherValue:
        """Lower ``a`` to ``level`` without multiplying (no-op when equal)."""
        if a.backend != self.tag:
            self._own(a)
        if level > a.level:
            raise LevelMismatch(f"cannot raise level {a.level} to {level}")
        if level == a.level:
            return a
        if level < 0:
            raise LevelMismatch("target level must be non-negative")
        return CipherValue(self._drop(a, level), a.log2_scale, level, self.tag)

    def multiply_rescale(self, a: CipherValue, b: CipherValue) -> CipherValue:
        lvl = min(a.level, b.level)
        return self.rescale(self.mul(self.align(a, lvl), self.align(b, lvl)))

    def multiply_plain_rescale(self, a: CipherValue, p) -> CipherValue:
        return self.rescale(self.mul_plain(a, p))

    # ---- payload hooks -------------------------------------------------
    def _add(self, a, b):
        raise NotImplementedError

    def _neg(self, a):
        raise NotImplementedError

    def _add_plain(self, a, p):
        raise NotImplementedError

    def _mul(self, a, b):
        raise NotImplementedError

    def _mul_plain(self, a, p, log2_pscale):
        raise NotImplementedError

    def _rescale(self, a):
        raise NotImplementedError

    def _drop(self, a, level):
        return a.payload


# free-function spellings of the contract
def he_add(ev: Evaluator, a, b):
    return ev.add(a, b)


def he_add_plain(ev: Evaluator, a, p):
    return ev.add_plain(a, p)


def he_mul(ev: Evaluator, a, b):
    return ev.mul(a, b)


def he_mul_plain(ev: Evaluator, a, p):
    return ev.mul_plain(a, p)


def he_rescale(ev: Evaluator, a):
    return ev.rescale(a)


def align_levels(ev: Evaluator, a, target_level: int):
    return ev.align(a, target_level)
