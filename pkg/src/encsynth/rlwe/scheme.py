"""Public RLWE operations: RNS arithmetic, encryption, add, multiply with
relinearization, rescale, and the ciphertext/key binary formats.

Ring elements are uint64 arrays of shape (k, N) holding residues modulo the
first k chain primes, in coefficient form. NTTs are applied only inside
products. Nothing in this module touches the secret key.

Relinearization uses an RNS gadget: for every ciphertext prime q_i the key
holds b_i = -a_i s + e_i + P g_i s^2 over the modulus Q P, where g_i is 1 mod
q_i and 0 mod every other q_j. A degree-2 term d2 is switched by
sum_i [d2]_{q_i} (b_i, a_i) followed by a rounded division by P.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .. import kernels
from .encoding import constant_coefficient, encode_real
from .params import SECURITY_STAMP, RlweParams

CT_MAGIC = b"RLWC"
KEY_MAGIC = b"RLWK"


class RlweError(Exception):
    pass


class ChainExhausted(RlweError):
    pass


# ---- RNS helpers -------------------------------------------------------

def reduce_signed(x: np.ndarray, q: int) -> np.ndarray:
    """Residues in [0, q) of a signed int64 vector."""
    return np.mod(x, np.int64(q)).astype(np.uint64)


def to_rns(x: np.ndarray, moduli) -> np.ndarray:
    return np.stack([reduce_signed(x, q) for q in moduli])


def add_mod(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    s = a + b
    return np.where(s >= np.uint64(q), s - np.uint64(q), s)


def sub_mod(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    return add_mod(a, np.uint64(q) - b, q)


def neg_mod(a: np.ndarray, q: int) -> np.ndarray:
    return np.where(a == 0, a, np.uint64(q) - a)


def centered(a: np.ndarray, q: int) -> np.ndarray:
    """Signed representative in (-q/2, q/2] as int64 (q < 2^62)."""
    s = a.astype(np.int64)
    return np.where(a > np.uint64(q // 2), s - np.int64(q), s)


def ntt_rows(x: np.ndarray, params: RlweParams, moduli) -> np.ndarray:
    return np.stack([params.ntt(q).forward(x[i]) for i, q in enumerate(moduli)])


def intt_rows(x: np.ndarray, params: RlweParams, moduli) -> np.ndarray:
    return np.stack([params.ntt(q).inverse(x[i]) for i, q in enumerate(moduli)])


def ring_mul(a: np.ndarray, b: np.ndarray, params: RlweParams, moduli) -> np.ndarray:
    """Negacyclic product of two coefficient-form RNS elements."""
    out = np.empty_like(a)
    for i, q in enumerate(moduli):
        t = params.ntt(q)
        out[i] = t.inverse(kernels.mul_mod(t.forward(a[i]), t.forward(b[i]), q))
    return out


def divide_round_by_last(x: np.ndarray, moduli) -> np.ndarray:
    """Round(x / q_last) for an RNS element over ``moduli``, dropping the last
    prime: (x_j - [x_last]_centered) * q_last^{-1} mod q_j."""
    q_last = moduli[-1]
    r = centered(x[-1], q_last)
    out = np.empty((len(moduli) - 1, x.shape[1]), dtype=np.uint64)
    for j, q in enumerate(moduli[:-1]):
        inv = pow(q_last, -1, q)
        out[j] = kernels.mul_scalar_mod(sub_mod(x[j], reduce_signed(r, q), q), inv, q)
    return out


# ---- containers ----------------------------------------------------------

@dataclass(frozen=True)
class RlweCiphertext:
    """Components (2 or, transiently, 3) of shape (k, N); k = level + 1."""

    parts: tuple
    params: RlweParams

    def __post_init__(self):
        ks = {p.shape for p in self.parts}
        if len(ks) != 1:
            raise RlweError("ciphertext components disagree on chain length")

    @property
    def chain_length(self) -> int:
        return self.parts[0].shape[0]

    @property
    def level(self) -> int:
        return self.chain_length - 1

    @property
    def moduli(self) -> tuple:
        return self.params.moduli[: self.chain_length]

    def to_bytes(self, log2_scale: float) -> bytes:
        """magic, params hash, chain length, component count, scale exponent,
        security stamp, then residues as little-endian uint64 words."""
        head = (CT_MAGIC + self.params.digest
                + struct.pack("<BBd", self.chain_length, len(self.parts), log2_scale)
                + struct.pack("<B", len(SECURITY_STAMP)) + SECURITY_STAMP)
        body = b"".join(np.ascontiguousarray(p, dtype="<u8").tobytes() for p in self.parts)
        return head + body

    @classmethod
    def from_bytes(cls, buf: bytes) -> tuple["RlweCiphertext", float]:
        if len(buf) < 23 or buf[:4] != CT_MAGIC:
            raise RlweError("not an RLWE ciphertext")
        params = RlweParams.lookup(bytes(buf[4:12]))
        k, ncomp, log2_scale = struct.unpack_from("<BBd", buf, 12)
        stamp_len = buf[22]
        off = 23 + stamp_len
        n = params.ring_dimension
        need = ncomp * k * n * 8
        if not 1 <= k <= len(params.moduli) or ncomp not in (2, 3) or len(buf) - off != need:
            raise RlweError("malformed RLWE ciphertext body")
        arr = np.frombuffer(buf, dtype="<u8", offset=off).astype(np.uint64)
        arr = arr.reshape(ncomp, k, n)
        for j, q in enumerate(params.moduli[:k]):
            if np.any(arr[:, j] >= np.uint64(q)):
                raise RlweError("residue out of range")
        return cls(tuple(arr[i].copy() for i in range(ncomp)), params), log2_scale


@dataclass(frozen=True)
class PublicKey:
    b: np.ndarray  # NTT form over the ciphertext primes
    a: np.ndarray


@dataclass(frozen=True)
class RelinKey:
    """Per ciphertext prime i: (b_i, a_i) in NTT form over q_0..q_L, P."""

    b: np.ndarray  # shape (L+1, L+2, N)
    a: np.ndarray
    params: RlweParams

    def to_bytes(self) -> bytes:
        head = KEY_MAGIC + self.params.pack() + struct.pack("<B", len(SECURITY_STAMP)) + SECURITY_STAMP
        return head + np.ascontiguousarray(self.b, "<u8").tobytes() + np.ascontiguousarray(self.a, "<u8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "RelinKey":
        if buf[:4] != KEY_MAGIC:
            raise RlweError("not an RLWE relinearization key")
        params, off = RlweParams.unpack(buf, 4)
        off += 1 + buf[off]
        k = len(params.moduli)
        shape = (k, k + 1, params.ring_dimension)
        size = int(np.prod(shape))
        if len(buf) - off != 16 * size:
            raise RlweError("malformed relinearization key")
        b = np.frombuffer(buf, "<u8", size, off).astype(np.uint64).reshape(shape)
        a = np.frombuffer(buf, "<u8", size, off + 8 * size).astype(np.uint64).reshape(shape)
        return cls(b, a, params)


# ---- sampling ----------------------------------------------------------------

def sample_ternary(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(-1, 2, n).astype(np.int64)


def sample_gaussian(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    return np.rint(rng.normal(0.0, sigma, n)).astype(np.int64)


def sample_uniform(rng: np.random.Generator, n: int, moduli) -> np.ndarray:
    return np.stack([rng.integers(0, q, n, dtype=np.uint64) for q in moduli])


# ---- operations ------------------------------------------------------------

def encrypt_coeffs(m: np.ndarray, pk: PublicKey, params: RlweParams,
                   rng: np.random.Generator) -> RlweCiphertext:
    """Public-key encryption of integer plaintext coefficients at full level."""
    n = params.ring_dimension
    moduli = params.moduli
    u = ntt_rows(to_rns(sample_ternary(rng, n), moduli), params, moduli)
    e0 = to_rns(sample_gaussian(rng, n, params.sigma), moduli)
    e1 = to_rns(sample_gaussian(rng, n, params.sigma), moduli)
    mm = to_rns(np.asarray(m, dtype=np.int64), moduli)
    c0 = np.empty((len(moduli), n), dtype=np.uint64)
    c1 = np.empty_like(c0)
    for i, q in enumerate(moduli):
        t = params.ntt(q)
        c0[i] = add_mod(add_mod(t.inverse(kernels.mul_mod(pk.b[i], u[i], q)), e0[i], q), mm[i], q)
        c1[i] = add_mod(t.inverse(kernels.mul_mod(pk.a[i], u[i], q)), e1[i], q)
    return RlweCiphertext((c0, c1), params)


def encrypt_values(values, pk: PublicKey, params: RlweParams, rng,
                   scale: float | None = None) -> RlweCiphertext:
    scale = params.scale if scale is None else scale
    if np.ndim(values) == 0:
        m = np.zeros(params.ring_dimension, dtype=np.int64)
        m[0] = constant_coefficient(values, scale)
    else:
        m = encode_real(values, scale, params.ring_dimension)
    return encrypt_coeffs(m, pk, params, rng)


def _check_pair(a: RlweCiphertext, b: RlweCiphertext) -> None:
    if a.params is not b.params and a.params.digest != b.params.digest:
        raise RlweError("ciphertexts under different parameters")
    if a.chain_length != b.chain_length:
        raise RlweError("chain lengths differ")


def rlwe_add(a: RlweCiphertext, b: RlweCiphertext) -> RlweCiphertext:
    _check_pair(a, b)
    parts = tuple(np.stack([add_mod(x[i], y[i], q) for i, q in enumerate(a.moduli)])
                  for x, y in zip(a.parts, b.parts))
    return RlweCiphertext(parts, a.params)


def rlwe_negate(a: RlweCiphertext) -> RlweCiphertext:
    parts = tuple(np.stack([neg_mod(x[i], q) for i, q in enumerate(a.moduli)]) for x in a.parts)
    return RlweCiphertext(parts, a.params)


def plain_poly(value, scale: float, params: RlweParams, moduli) -> tuple[np.ndarray | None, int | None]:
    """Either (None, integer constant) for a scalar or (RNS poly, None)."""
    if np.ndim(value) == 0:
        return None, constant_coefficient(value, scale)
    return to_rns(encode_real(value, scale, params.ring_dimension), moduli), None


def rlwe_add_plain(a: RlweCiphertext, value, scale: float) -> RlweCiphertext:
    poly, const = plain_poly(value, scale, a.params, a.moduli)
    c0 = a.parts[0].copy()
    for i, q in enumerate(a.moduli):
        if poly is None:
            c0[i, 0] = (int(c0[i, 0]) + const) % q
        else:
            c0[i] = add_mod(c0[i], poly[i], q)
    return RlweCiphertext((c0,) + a.parts[1:], a.params)


def rlwe_mul_plain(a: RlweCiphertext, value, scale: float) -> RlweCiphertext:
    poly, const = plain_poly(value, scale, a.params, a.moduli)
    parts = []
    for x in a.parts:
        out = np.empty_like(x)
        for i, q in enumerate(a.moduli):
            if poly is None:
                out[i] = kernels.mul_scalar_mod(x[i], const % q, q)
            else:
                t = a.params.ntt(q)
                out[i] = t.inverse(kernels.mul_mod(t.forward(x[i]), t.forward(poly[i]), q))
        parts.append(out)
    return RlweCiphertext(tuple(parts), a.params)


def rlwe_mul(a: RlweCiphertext, b: RlweCiphertext) -> RlweCiphertext:
    """Tensor product (c0, c1, c2) without relinearization."""
    _check_pair(a, b)
    if len(a.parts) != 2 or len(b.parts) != 2:
        raise RlweError("relinearize before multiplying again")
    params, moduli = a.params, a.moduli
    k, n = a.chain_length, params.ring_dimension
    d0, d1, d2 = (np.empty((k, n), dtype=np.uint64) for _ in range(3))
    for i, q in enumerate(moduli):
        t = params.ntt(q)
        a0, a1 = t.forward(a.parts[0][i]), t.forward(a.parts[1][i])
        b0, b1 = t.forward(b.parts[0][i]), t.forward(b.parts[1][i])
        d0[i] = t.inverse(kernels.mul_mod(a0, b0, q))
        d1[i] = t.inverse(add_mod(kernels.mul_mod(a0, b1, q), kernels.mul_mod(a1, b0, q), q))
        d2[i] = t.inverse(kernels.mul_mod(a1, b1, q))
    return RlweCiphertext((d0, d1, d2), params)


def relinearize(c: RlweCiphertext, rk: RelinKey) -> RlweCiphertext:
    if len(c.parts) == 2:
        return c
    params = c.params
    k = c.chain_length
    moduli = c.moduli
    ext = (*moduli, params.special)
    key_rows = list(range(k)) + [len(params.moduli)]  # rows of the key for ext
    d2 = c.parts[2]
    acc0 = np.zeros((k + 1, params.ring_dimension), dtype=np.uint64)
    acc1 = np.zeros_like(acc0)
    for i in range(k):
        digit = d2[i]
        for j, q in enumerate(ext):
            t = params.ntt(q)
            dj = t.forward(digit % np.uint64(q))
            r = key_rows[j]
            acc0[j] = add_mod(acc0[j], kernels.mul_mod(dj, rk.b[i, r], q), q)
            acc1[j] = add_mod(acc1[j], kernels.mul_mod(dj, rk.a[i, r], q), q)
    ks0 = divide_round_by_last(intt_rows(acc0, params, ext), ext)
    ks1 = divide_round_by_last(intt_rows(acc1, params, ext), ext)
    c0 = np.stack([add_mod(c.parts[0][j], ks0[j], q) for j, q in enumerate(moduli)])
    c1 = np.stack([add_mod(c.parts[1][j], ks1[j], q) for j, q in enumerate(moduli)])
    return RlweCiphertext((c0, c1), params)


def rlwe_mul_relin(a: RlweCiphertext, b: RlweCiphertext, rk: RelinKey) -> RlweCiphertext:
    return relinearize(rlwe_mul(a, b), rk)


def rlwe_rescale(a: RlweCiphertext) -> RlweCiphertext:
    """Divide by the last active prime (rounded) and drop it."""
    if a.chain_length < 2:
        raise ChainExhausted("no prime left to rescale by")
    return RlweCiphertext(tuple(divide_round_by_last(x, a.moduli) for x in a.parts), a.params)


def rlwe_mod_drop(a: RlweCiphertext, chain_length: int) -> RlweCiphertext:
    if not 1 <= chain_length <= a.chain_length:
        raise RlweError("invalid chain length")
    return RlweCiphertext(tuple(x[:chain_length].copy() for x in a.parts), a.params)
