"""Plaintext-arithmetic evaluators: the exact backend and the noise emulator.

Both keep payloads as float64 scalars or arrays and perform the same float
operations in the same order, so an emulator with zero noise reproduces the
exact backend bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import (EMULATOR, EXACT, UNBOUNDED_LEVEL, CipherValue, Evaluator, HeProfile,
                   DEFAULT_PROFILE)


@dataclass(frozen=True)
class NoiseModel:
    """Additive error injected by the emulator.

    ``sigma_op`` is the standard deviation of a Gaussian added to the output of
    every arithmetic operation (and to fresh encryptions); ``rescale_error``
    bounds an extra uniform rounding error added on rescale.
    """

    sigma_op: float = 2.0**-25
    rescale_error: float = 0.0

    def __post_init__(self):
        if not self.sigma_op >= 0.0 or not self.rescale_error >= 0.0:
            raise ValueError("noise parameters must be non-negative")

    def to_json(self) -> bytes:
        return json.dumps(asdict(self), sort_keys=True).encode()

    @classmethod
    def from_json(cls, b: bytes) -> "NoiseModel":
        return cls(**json.loads(b))


ZERO_NOISE = NoiseModel(0.0, 0.0)


class NoiseSource:
    """Seeded Gaussian stream drawn in blocks (one RNG call per block)."""

    block = 1 << 16

    def __init__(self, sigma: float, seed):
        self.sigma = sigma
        self.rng = np.random.default_rng(seed)
        self._buf: list = []
        self._pos = 0

    def scalar(self) -> float:
        pos = self._pos
        if pos >= len(self._buf):
            self._buf = (self.rng.standard_normal(self.block) * self.sigma).tolist()
            pos = 0
        self._pos = pos + 1
        return self._buf[pos]

    def vector(self, n: int) -> np.ndarray:
        return self.rng.standard_normal(n) * self.sigma

    def like(self, x):
        if type(x) is float:
            return x + self.scalar()
        if isinstance(x, np.ndarray):
            return x + self.vector(x.shape[0])
        return x + self.scalar()


class _FusedPolyMixin:
    """Power-tree polynomial evaluation on bare payloads.

    Performs the float operations, noise draws and trace entries of the
    generic ``poly_eval`` in the same order, without building an intermediate
    CipherValue per operation. Only valid for inputs at scale Delta, where
    every intermediate product rescales back to Delta exactly.
    """

    def _noisy(self, x):
        return x

    def _rescale_payload(self, x):
        return x

    def fused_poly(self, c: CipherValue, coeffs, need: int) -> CipherValue:
        noisy, rescale, trace = self._noisy, self._rescale_payload, self.trace.append
        powers = {1: (c.payload, c.level)}

        def power(k: int):
            if k in powers:
                return powers[k]
            hi = 1 << (k.bit_length() - 1)
            if hi == k:
                a = b = power(k // 2)
            else:
                a, b = power(hi), power(k - hi)
            lvl = min(a[1], b[1])
            trace(("mul", lvl))
            x = noisy(a[0] * b[0])
            trace(("rescale", lvl))
            powers[k] = p = (rescale(x), lvl - 1)
            return p

        terms = []
        for k, a in enumerate(coeffs):
            if k > 0 and a != 0:
                x, lvl = power(k)
                trace(("mul_plain", lvl))
                x = noisy(x * a)
                trace(("rescale", lvl))
                terms.append(rescale(x))
        target = c.level - need
        acc = terms[0]
        for t in terms[1:]:
            trace(("add", target))
            acc = noisy(acc + t)
        trace(("add_plain", target))
        return CipherValue(noisy(acc + coeffs[0]), self.log2_delta, target, self.tag)


class ExactEvaluator(_FusedPolyMixin, Evaluator):
    """Plaintext arithmetic with level bookkeeping and unbounded depth."""

    tag = EXACT

    def __init__(self, profile: HeProfile = DEFAULT_PROFILE):
        super().__init__(profile)

    @property
    def fresh_level(self) -> int:
        return UNBOUNDED_LEVEL

    def _add(self, a, b):
        return a.payload + b.payload

    def _neg(self, a):
        return -a.payload

    def _add_plain(self, a, p):
        return a.payload + p

    def _mul(self, a, b):
        return a.payload * b.payload

    def _mul_plain(self, a, p, log2_pscale):
        return a.payload * p

    def _rescale(self, a):
        return a.payload


class EmulatorEvaluator(_FusedPolyMixin, Evaluator):
    """Plaintext arithmetic plus level faults and seeded noise injection."""

    tag = EMULATOR

    def __init__(self, profile: HeProfile = DEFAULT_PROFILE,
                 noise: NoiseModel = NoiseModel(), seed=0):
        super().__init__(profile)
        self.noise = noise
        self.seed = seed
        op_seq, rescale_seq = np.random.SeedSequence(seed).spawn(2)
        self._src = NoiseSource(noise.sigma_op, op_seq) if noise.sigma_op > 0 else None
        self._rng_rescale = (np.random.default_rng(rescale_seq)
                             if noise.rescale_error > 0 else None)

    def _noisy(self, x):
        src = self._src
        if src is None:
            return x
        if type(x) is float:  # inlined NoiseSource.scalar (hot path)
            pos = src._pos
            if pos < len(src._buf):
                src._pos = pos + 1
                return x + src._buf[pos]
        return src.like(x)

    def _add(self, a, b):
        return self._noisy(a.payload + b.payload)

    def _neg(self, a):
        return -a.payload

    def _add_plain(self, a, p):
        return self._noisy(a.payload + p)

    def _mul(self, a, b):
        return self._noisy(a.payload * b.payload)

    def _mul_plain(self, a, p, log2_pscale):
        return self._noisy(a.payload * p)

    def _rescale(self, a):
        return self._rescale_payload(a.payload)

    def _rescale_payload(self, x):
        if self._rng_rescale is None:
            return x
        r = self.noise.rescale_error
        if isinstance(x, np.ndarray):
            return x + self._rng_rescale.uniform(-r, r, x.shape[0])
        return x + float(self._rng_rescale.uniform(-r, r))
