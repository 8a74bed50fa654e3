"""The RLWE scheme behind the generic evaluator contract.

Scale semantics: a rescale declares the new scale to be exactly Delta while
the ciphertext is really divided by the dropped prime q. Plaintext
multipliers are encoded at q itself, so plaintext products land exactly on
Delta. A ciphertext product carries a relative bias |q/Delta - 1| (at most a
few 1e-6 for the shipped chains), which is part of the backend's documented
approximation error. In exchange every ciphertext at a given level has the
same scale and additions never need coercion.
"""

from __future__ import annotations

from ..he.core import RLWE, CipherValue, Evaluator, FormatError, HeProfile, register_codec
from .params import RlweParams
from .scheme import (RelinKey, RlweCiphertext, RlweError, rlwe_add, rlwe_add_plain,
                     rlwe_mod_drop, rlwe_mul, rlwe_mul_plain, rlwe_negate, rlwe_rescale,
                     relinearize)


def _encode(c: CipherValue) -> bytes:
    return c.payload.to_bytes(c.log2_scale)


def _decode(b: bytes) -> RlweCiphertext:
    try:
        ct, _ = RlweCiphertext.from_bytes(b)
    except (RlweError, KeyError, ValueError) as exc:
        raise FormatError(str(exc)) from None
    return ct


register_codec(RLWE, _encode, _decode)


class RlweEvaluator(Evaluator):
    """Public evaluator: needs only the relinearization key."""

    tag = RLWE

    def __init__(self, profile: HeProfile, relin: RelinKey):
        super().__init__(profile)
        self.params: RlweParams = relin.params
        self.relin = relin
        if self.params.levels != profile.usable_levels:
            raise ValueError("relinearization key does not match the profile's chain")

    @classmethod
    def from_eval_key(cls, profile: HeProfile, blob: bytes) -> "RlweEvaluator":
        return cls(profile, RelinKey.from_bytes(blob))

    @property
    def fresh_level(self) -> int:
        return self.params.levels

    def _add(self, a, b):
        return rlwe_add(a.payload, b.payload)

    def _neg(self, a):
        return rlwe_negate(a.payload)

    def _add_plain(self, a, p):
        return rlwe_add_plain(a.payload, p, 2.0**a.log2_scale)

    def _mul(self, a, b):
        return relinearize(rlwe_mul(a.payload, b.payload), self.relin)

    def _mul_plain(self, a, p, log2_pscale):
        # encode at the prime the following rescale divides by
        return rlwe_mul_plain(a.payload, p, float(self.params.moduli[a.level]))

    def _rescale(self, a):
        return rlwe_rescale(a.payload)

    def _drop(self, a, level):
        return rlwe_mod_drop(a.payload, level + 1)
