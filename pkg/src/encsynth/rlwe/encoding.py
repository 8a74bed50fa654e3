"""Canonical-embedding encoding of real slot vectors.

A ring element m(X) mod X^N + 1 with real coefficients is identified with its
values at the primitive 2N-th roots zeta^(2j+1), j = 0..N/2-1 (one root from
each conjugate pair), which gives N/2 real slots. Both directions are a
length-N FFT after twisting coefficients by zeta^n.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# coefficients must stay well inside int64 (and below every 60-bit chain prime)
COEFF_LIMIT = 2.0**62


class EncodingOverflow(ValueError):
    pass


@lru_cache(maxsize=8)
def _twist(n: int) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n) / n)


def slot_count(n: int) -> int:
    return n // 2


def embed(coeffs: np.ndarray) -> np.ndarray:
    """Slot values of a real-coefficient polynomial (complex, length N/2)."""
    n = len(coeffs)
    return (n * np.fft.ifft(np.asarray(coeffs, dtype=float) * _twist(n)))[: n // 2]


def encode_real(values, scale: float, n: int) -> np.ndarray:
    """Integer coefficients (int64) of the encoding of ``values`` at ``scale``.

    Short vectors are zero-padded to N/2 slots.
    """
    z = np.zeros(n // 2)
    v = np.asarray(values, dtype=float).ravel()
    if len(v) > n // 2:
        raise ValueError(f"at most {n // 2} slots for N={n}")
    z[: len(v)] = v
    full = np.concatenate([z, z[::-1]]).astype(complex)  # conjugate pairs (real slots)
    coeffs = (np.fft.fft(full) / n * np.conj(_twist(n))).real * scale
    coeffs = np.rint(coeffs)
    if np.any(np.abs(coeffs) >= COEFF_LIMIT):
        raise EncodingOverflow("encoded coefficients exceed modulus capacity")
    return coeffs.astype(np.int64)


def decode_real(coeffs, scale: float, count: int | None = None) -> np.ndarray:
    """Inverse of :func:`encode_real` for float or integer coefficients."""
    c = np.asarray(coeffs, dtype=float)
    z = embed(c).real / scale
    return z if count is None else z[:count]


def constant_coefficient(value: float, scale: float) -> int:
    """A real constant broadcast to every slot is the constant polynomial."""
    m = round(float(value) * scale)
    if abs(m) >= COEFF_LIMIT:
        raise EncodingOverflow("encoded constant exceeds modulus capacity")
    return int(m)
