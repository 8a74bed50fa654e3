"""Toy RLWE instantiation of the approximate scheme (not hardened: no
security analysis, no side-channel care). The secret key API is in
:mod:`encsynth.rlwe.secret` and is deliberately not re-exported here.
"""

from .encoding import decode_real, encode_real, slot_count
from .ntt import negacyclic_mul, ntt_forward, ntt_inverse, ntt_primes
from .params import SECURITY_STAMP, RlweParams
from .scheme import (ChainExhausted, PublicKey, RelinKey, RlweCiphertext, RlweError,
                     encrypt_values, rlwe_add, rlwe_mod_drop, rlwe_mul, rlwe_mul_plain,
                     rlwe_mul_relin, rlwe_rescale)

__all__ = [
    "decode_real", "encode_real", "slot_count", "negacyclic_mul", "ntt_forward",
    "ntt_inverse", "ntt_primes", "SECURITY_STAMP", "RlweParams", "ChainExhausted",
    "PublicKey", "RelinKey", "RlweCiphertext", "RlweError", "encrypt_values", "rlwe_add",
    "rlwe_mod_drop", "rlwe_mul", "rlwe_mul_plain", "rlwe_mul_relin", "rlwe_rescale",
]
