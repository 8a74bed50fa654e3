"""Polynomial evaluation over ciphertexts, the exponential approximation and
the encrypted Z-learning update.

Level accounting (documented exactly; ``depth_required`` returns these):

* ``x^k`` is built by a power tree, ``x^k = x^(2^j) * x^(k - 2^j)`` with
  ``2^j`` the largest power of two below ``k``; it sits ``ceil(log2 k)``
  levels below ``x``.
* each non-constant term is ``rescale(mul_plain(x^k, a_k))``, one more level,
  so a degree-``d`` polynomial consumes ``ceil(log2 d) + 1`` levels; a
  constant consumes none.
* ``exp_neg_scaled`` adds one level per squaring.
* the Z update consumes 2 levels (ciphertext successor) or 1 (plaintext
  absorbing successor).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial

from .core import CipherValue, Evaluator, LevelExhausted

TAYLOR = "taylor"
CHEBYSHEV = "chebyshev"

Z_UPDATE_DEPTH = 2
Z_UPDATE_ABSORBING_DEPTH = 1


def poly_depth(degree: int) -> int:
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return 0 if degree == 0 else math.ceil(math.log2(degree)) + 1


def _effective_degree(coeffs) -> int:
    nz = [k for k, a in enumerate(coeffs) if k > 0 and a != 0]
    return max(nz) if nz else 0


def poly_eval(ev: Evaluator, c: CipherValue, coeffs) -> CipherValue:
    """Evaluate sum_k coeffs[k] * c^k with the power tree."""
    coeffs = [float(a) for a in coeffs]
    if not coeffs:
        raise ValueError("empty coefficient list")
    d = _effective_degree(coeffs)
    need = poly_depth(d)
    if c.level < need:
        raise LevelExhausted("poly_eval", c.level, ev.trace)
    if d == 0:
        # c - c is an encryption of zero at c's level and scale
        return ev.add_plain(ev.sub(c, c), coeffs[0])
    fused = getattr(ev, "fused_poly", None)
    if fused is not None and c.log2_scale == ev.log2_delta:
        return fused(c, coeffs, need)
    powers = {1: c}

    def power(k: int) -> CipherValue:
        if k in powers:
            return powers[k]
        hi = 1 << (k.bit_length() - 1)
        if hi == k:
            half = power(k // 2)
            p = ev.rescale(ev.mul(half, half))
        else:
            p = ev.multiply_rescale(power(hi), power(k - hi))
        powers[k] = p
        return p

    terms = [ev.rescale(ev.mul_plain(power(k), a))
             for k, a in enumerate(coeffs) if k > 0 and a != 0]
    target = c.level - need
    acc = ev.align(terms[0], target)
    for t in terms[1:]:
        acc = ev.add(acc, ev.align(t, target))
    return ev.add_plain(acc, coeffs[0])


def horner(coeffs, x):
    """Plaintext polynomial evaluation (oracle for poly_eval)."""
    r = np.zeros_like(np.asarray(x, dtype=float))
    for a in reversed(list(coeffs)):
        r = r * x + a
    return r


SWEEP_POINTS = 100_000


@dataclass(frozen=True)
class ExpApproxConfig:
    """Polynomial approximation of e^{-c/lam} on [0, c_max].

    The polynomial approximates e^{-c/(lam 2^m)} and the result is squared
    ``m`` times. ``eps_approx`` is certified at construction by a dense
    plaintext sweep of the domain.
    """

    degree: int = 8
    c_max: float = 0.1
    lam: float = 0.15
    squarings: int | None = None
    method: str = TAYLOR
    coefficients: tuple = field(init=False, repr=False, compare=False)
    eps_approx: float = field(init=False, compare=False)

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if not self.c_max > 0 or not self.lam > 0:
            raise ValueError("c_max and lam must be positive")
        if self.method not in (TAYLOR, CHEBYSHEV):
            raise ValueError(f"unknown method {self.method!r}")
        m = self.squarings
        if m is None:
            m = max(0, math.ceil(math.log2(self.c_max / self.lam))) if self.c_max > self.lam else 0
        if m < 0:
            raise ValueError("squarings must be non-negative")
        object.__setattr__(self, "squarings", int(m))
        object.__setattr__(self, "coefficients", tuple(self._coefficients()))
        grid = np.linspace(0.0, self.c_max, SWEEP_POINTS)
        err = np.abs(self.evaluate_plain(grid) - np.exp(-grid / self.lam))
        # slack for the space between grid points
        slack = float(np.max(np.abs(np.diff(err)))) if len(err) > 1 else 0.0
        object.__setattr__(self, "eps_approx", float(err.max()) + slack)

    @property
    def reduced_rate(self) -> float:
        return 1.0 / (self.lam * 2**self.squarings)

    def _coefficients(self) -> list[float]:
        r = self.reduced_rate
        if self.method == TAYLOR:
            return [(-r) ** k / math.factorial(k) for k in range(self.degree + 1)]
        cheb = Chebyshev.interpolate(lambda c: np.exp(-r * c), self.degree,
                                     domain=[0.0, self.c_max])
        coef = cheb.convert(kind=Polynomial).coef
        return [float(a) for a in np.pad(coef, (0, self.degree + 1 - len(coef)))]

    def evaluate_plain(self, c):
        v = horner(self.coefficients, np.asarray(c, dtype=float))
        for _ in range(self.squarings):
            v = v * v
        return v

    @property
    def depth(self) -> int:
        return poly_depth(_effective_degree(self.coefficients)) + self.squarings

    def to_dict(self) -> dict:
        return {"degree": self.degree, "c_max": self.c_max, "lam": self.lam,
                "squarings": self.squarings, "method": self.method}

    def to_json(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True).encode()

    @classmethod
    def from_dict(cls, d: dict) -> "ExpApproxConfig":
        return cls(int(d["degree"]), float(d["c_max"]), float(d["lam"]),
                   None if d.get("squarings") is None else int(d["squarings"]),
                   d.get("method", TAYLOR))

    @classmethod
    def from_json(cls, b: bytes) -> "ExpApproxConfig":
        return cls.from_dict(json.loads(b))


def exp_neg_scaled(ev: Evaluator, c_cost: CipherValue, config: ExpApproxConfig) -> CipherValue:
    """Approximately e^{-c/lam} for an encrypted cost c in [0, c_max]."""
    if c_cost.level < config.depth:
        raise LevelExhausted("exp_neg_scaled", c_cost.level, ev.trace)
    r = poly_eval(ev, c_cost, config.coefficients)
    for _ in range(config.squarings):
        r = ev.rescale(ev.mul(r, r))
    return r


def z_update_shortfall(z_x: CipherValue, z_next, factor: CipherValue) -> list[str]:
    """Names of the operands lacking depth for ``encrypted_z_update``."""
    short = []
    if isinstance(z_next, CipherValue):
        if factor.level < Z_UPDATE_DEPTH:
            short.append("factor")
        if z_next.level < Z_UPDATE_DEPTH:
            short.append("z_next")
    elif factor.level < Z_UPDATE_ABSORBING_DEPTH:
        short.append("factor")
    if z_x.level < 1:
        short.append("z_x")
    return short


def encrypted_z_update(ev: Evaluator, z_x: CipherValue, z_next, factor: CipherValue,
                       alpha: float) -> CipherValue:
    """(1 - alpha) z_x + alpha (factor z_next) over ciphertexts.

    ``z_next`` may be a plaintext float (absorbing successor). Resulting level
    is min(factor - 2, z_next - 2, z_x - 1) for a ciphertext successor and
    min(factor - 1, z_x - 1) otherwise.
    """
    short = z_update_shortfall(z_x, z_next, factor)
    if short:
        raise LevelExhausted("z_update[" + ",".join(short) + "]",
                             min(z_x.level, factor.level), ev.trace)
    alpha = float(alpha)
    if isinstance(z_next, CipherValue):
        prod = ev.multiply_rescale(factor, z_next)
        t = ev.rescale(ev.mul_plain(prod, alpha))
    else:
        t = ev.rescale(ev.mul_plain(factor, alpha * float(z_next)))
    u = ev.rescale(ev.mul_plain(z_x, 1.0 - alpha))
    lvl = min(u.level, t.level)
    return ev.add(ev.align(u, lvl), ev.align(t, lvl))


def depth_required(item) -> int:
    """Multiplicative depth of a pipeline stage or a sequence of stages.

    Accepts a polynomial degree (int), an :class:`ExpApproxConfig`, the
    strings ``"z_update"`` / ``"z_update_absorbing"``, or a list of these.
    """
    if isinstance(item, ExpApproxConfig):
        return item.depth
    if isinstance(item, str):
        if item == "z_update":
            return Z_UPDATE_DEPTH
        if item == "z_update_absorbing":
            return Z_UPDATE_ABSORBING_DEPTH
        raise ValueError(f"unknown stage {item!r}")
    if isinstance(item, (int, np.integer)):
        return poly_depth(int(item))
    if isinstance(item, (list, tuple)):
        return sum(depth_required(x) for x in item)
    raise TypeError(f"cannot size {item!r}")


def exact_factor(config: ExpApproxConfig):
    """Plaintext map c -> exp_neg_scaled(c) with the exact backend's float order.

    Plaintext Z-learning driven by this factor reproduces an exact-backend
    encrypted session bit for bit.
    """
    from .core import EXACT, UNBOUNDED_LEVEL
    from .plain import ExactEvaluator

    ev = ExactEvaluator()

    def factor(c: float) -> float:
        x = CipherValue(float(c), ev.profile.log2_scale, UNBOUNDED_LEVEL, EXACT)
        return float(exp_neg_scaled(ev, x, config).payload)

    return factor
