"""Client-side backends: encryption, decryption and key material.

A backend bundles the public evaluator with the ability to encrypt and
decrypt. Only the client constructs these; the server builds its evaluator
from the evaluation-key blob (see :func:`encsynth.he.backends.make_evaluator`).
"""

from __future__ import annotations

import json

import numpy as np

from .core import (EMULATOR, EXACT, RLWE, UNBOUNDED_LEVEL, BackendMismatch, CipherValue,
                   HeProfile, DEFAULT_PROFILE, check_plaintext)
from .plain import EmulatorEvaluator, ExactEvaluator, NoiseModel, NoiseSource


class ClientBackend:
    tag: int = -1
    name: str = ""

    def __init__(self, profile: HeProfile):
        self.profile = profile
        self.log2_delta = float(profile.log2_scale)

    def _own(self, c: CipherValue) -> None:
        if c.backend != self.tag:
            raise BackendMismatch(f"cannot decrypt a {c.backend} ciphertext with {self.name}")

    def encrypt(self, value) -> CipherValue:
        raise NotImplementedError

    def decrypt(self, c: CipherValue, slots: int | None = None):
        raise NotImplementedError

    def refresh(self, c: CipherValue, slots: int | None = None) -> CipherValue:
        """Decrypt and re-encrypt at the full level."""
        return self.encrypt(self.decrypt(c, slots))

    def eval_key(self) -> bytes:
        return b""


def _plain_copy(value):
    check_plaintext(value)
    if np.ndim(value) == 0:
        return float(value)
    return np.array(value, dtype=float).ravel()


class ExactBackend(ClientBackend):
    tag, name = EXACT, "exact"

    def __init__(self, profile: HeProfile = DEFAULT_PROFILE):
        super().__init__(profile)
        self.evaluator = ExactEvaluator(profile)

    def encrypt(self, value) -> CipherValue:
        return CipherValue(_plain_copy(value), self.log2_delta, UNBOUNDED_LEVEL, EXACT)

    def decrypt(self, c: CipherValue, slots: int | None = None):
        self._own(c)
        p = c.payload
        return p.copy() if isinstance(p, np.ndarray) else p


class EmulatorBackend(ClientBackend):
    tag, name = EMULATOR, "emulator"

    def __init__(self, profile: HeProfile = DEFAULT_PROFILE, noise: NoiseModel = NoiseModel(),
                 seed=0):
        super().__init__(profile)
        self.noise = noise
        self.seed = seed
        self.evaluator = EmulatorEvaluator(profile, noise, [seed, 1])
        self._src = NoiseSource(noise.sigma_op, [seed, 2]) if noise.sigma_op > 0 else None

    def encrypt(self, value) -> CipherValue:
        p = _plain_copy(value)
        if self._src is not None:
            p = self._src.like(p)
        return CipherValue(p, self.log2_delta, self.profile.usable_levels, EMULATOR)

    def decrypt(self, c: CipherValue, slots: int | None = None):
        self._own(c)
        p = c.payload
        return p.copy() if isinstance(p, np.ndarray) else p

    def eval_key(self) -> bytes:
        return json.dumps({"sigma_op": self.noise.sigma_op,
                           "rescale_error": self.noise.rescale_error,
                           "seed": [int(self.seed), 1]}, sort_keys=True).encode()


class RlweBackend(ClientBackend):
    """Holds an RLWE key set; ring dimension and chain come from the profile."""

    tag, name = RLWE, "rlwe"

    def __init__(self, profile: HeProfile = DEFAULT_PROFILE, seed=0, sigma: float = 3.2):
        from ..rlwe.evaluator import RlweEvaluator
        from ..rlwe.params import RlweParams
        from ..rlwe.secret import keygen

        super().__init__(profile)
        self.params = RlweParams.from_profile(profile, sigma)
        self.rng = np.random.default_rng(seed)
        self.keys = keygen(self.params, self.rng)
        self.evaluator = RlweEvaluator(profile, self.keys.relin)

    def encrypt(self, value) -> CipherValue:
        from ..rlwe.scheme import encrypt_values

        check_plaintext(value)
        v = float(value) if np.ndim(value) == 0 else np.asarray(value, dtype=float).ravel()
        ct = encrypt_values(v, self.keys.public, self.params, self.rng)
        return CipherValue(ct, self.log2_delta, self.params.levels, RLWE)

    def decrypt(self, c: CipherValue, slots: int | None = None):
        """Slot 0 as a float by default, or the first ``slots`` slots."""
        from ..rlwe.secret import rlwe_decrypt

        self._own(c)
        v = rlwe_decrypt(c.payload, self.keys.secret, 2.0**c.log2_scale)
        return float(v[0]) if slots is None else v[:slots]

    def eval_key(self) -> bytes:
        return self.keys.relin.to_bytes()


def make_backend(name: str, profile: HeProfile = DEFAULT_PROFILE, seed=0,
                 noise: NoiseModel | None = None) -> ClientBackend:
    if name == "exact":
        return ExactBackend(profile)
    if name == "emulator":
        return EmulatorBackend(profile, noise or NoiseModel(), seed)
    if name == "rlwe":
        return RlweBackend(profile, seed)
    raise ValueError(f"unknown backend {name!r}")


def he_encrypt(value, backend: ClientBackend) -> CipherValue:
    return backend.encrypt(value)


def he_decrypt(c: CipherValue, backend: ClientBackend, slots: int | None = None):
    return backend.decrypt(c, slots)
