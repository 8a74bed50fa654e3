"""RLWE parameter sets and their modulus chains."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import cached_property

from .ntt import ntt_primes, tables

SECURITY_STAMP = b"security: NONE (research toy)"

_REGISTRY: dict = {}


@dataclass(frozen=True)
class RlweParams:
    """Ring dimension, ciphertext primes q_0..q_L, special prime P, scale.

    ``moduli[0]`` is the decryption prime, ``moduli[1:]`` are the rescaling
    primes (one per level) and ``special`` is used only for key switching.
    """

    ring_dimension: int
    moduli: tuple
    special: int
    log2_scale: int = 40
    sigma: float = 3.2

    def __post_init__(self):
        n = self.ring_dimension
        if n & (n - 1) or not 2**10 <= n <= 2**14:
            raise ValueError("ring dimension must be a power of two in [2^10, 2^14]")
        for q in (*self.moduli, self.special):
            if (q - 1) % (2 * n):
                raise ValueError(f"prime {q} is not 1 mod 2N")
        if len(set((*self.moduli, self.special))) != len(self.moduli) + 1:
            raise ValueError("chain primes must be distinct")
        _REGISTRY[self.digest] = self

    @classmethod
    def from_profile(cls, profile, sigma: float = 3.2) -> "RlweParams":
        """Prime chain for an :class:`HeProfile`.

        The first and last chain entries size the decryption and special
        primes; the interior primes are taken as close to the scale as
        possible (log2_scale bits) so that rescaling lands back near Delta.
        """
        n = profile.ring_dimension
        bits = profile.chain_bits
        interior = len(bits) - 2
        q0 = ntt_primes(bits[0], n, 1)[0]
        mids = ntt_primes(profile.log2_scale, n, interior,
                          near=1 << profile.log2_scale, exclude=(q0,)) if interior else []
        special = ntt_primes(bits[-1], n, 1, exclude=(q0, *mids))[0]
        # the top level is rescaled most often: give it the prime closest to Delta
        return cls(n, (q0, *reversed(mids)), special, profile.log2_scale, sigma)

    @property
    def levels(self) -> int:
        return len(self.moduli) - 1

    @property
    def scale(self) -> float:
        return 2.0**self.log2_scale

    @property
    def slots(self) -> int:
        return self.ring_dimension // 2

    @cached_property
    def digest(self) -> bytes:
        blob = struct.pack(f"<II{len(self.moduli) + 1}Qd", self.ring_dimension, self.log2_scale,
                           *self.moduli, self.special, self.sigma)
        return hashlib.sha256(blob).digest()[:8]

    @cached_property
    def log2_moduli(self) -> tuple:
        return tuple(math.log2(q) for q in self.moduli)

    def ntt(self, q: int):
        return tables(q, self.ring_dimension)

    def pack(self) -> bytes:
        k = len(self.moduli)
        return (struct.pack(f"<IIdB{k}QQ", self.ring_dimension, self.log2_scale, self.sigma,
                            k, *self.moduli, self.special))

    @classmethod
    def unpack(cls, buf: bytes, offset: int = 0) -> tuple["RlweParams", int]:
        n, ls, sigma, k = struct.unpack_from("<IIdB", buf, offset)
        off = offset + 17
        vals = struct.unpack_from(f"<{k}QQ", buf, off)
        return cls(n, tuple(vals[:k]), vals[k], ls, sigma), off + 8 * (k + 1)

    @staticmethod
    def lookup(digest: bytes) -> "RlweParams":
        try:
            return _REGISTRY[digest]
        except KeyError:
            raise KeyError("unknown RLWE parameter set; load the evaluation key first") from None
