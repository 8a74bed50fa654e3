"""Leveled approximate homomorphic arithmetic.

Public, key-free pieces only; encryption and decryption live in
:mod:`encsynth.he.keys`, which server-side code never imports.
"""

from .backends import make_evaluator
from .core import (EMULATOR, EXACT, DEFAULT_PROFILE, RLWE, UNBOUNDED_LEVEL, BackendMismatch,
                   CipherValue, Evaluator, FormatError, HeError, HeProfile, LevelExhausted,
                   LevelMismatch, PlaintextBoundError, ScaleMismatch, align_levels,
                   deserialize_cipher, he_add, he_add_plain, he_mul, he_mul_plain, he_rescale,
                   serialize_cipher)
from .plain import EmulatorEvaluator, ExactEvaluator, NoiseModel
from .poly import (CHEBYSHEV, TAYLOR, ExpApproxConfig, depth_required, encrypted_z_update,
                   exact_factor, exp_neg_scaled, poly_eval, z_update_shortfall)

__all__ = [
    "EMULATOR", "EXACT", "DEFAULT_PROFILE", "RLWE", "UNBOUNDED_LEVEL", "BackendMismatch",
    "CipherValue", "Evaluator", "FormatError", "HeError", "HeProfile", "LevelExhausted",
    "LevelMismatch", "PlaintextBoundError", "ScaleMismatch", "align_levels",
    "deserialize_cipher", "he_add", "he_add_plain", "he_mul", "he_mul_plain", "he_rescale",
    "serialize_cipher", "EmulatorEvaluator", "ExactEvaluator", "NoiseModel", "CHEBYSHEV",
    "TAYLOR", "ExpApproxConfig", "depth_required", "encrypted_z_update", "exp_neg_scaled",
    "poly_eval", "z_update_shortfall", "make_evaluator", "exact_factor",
]
