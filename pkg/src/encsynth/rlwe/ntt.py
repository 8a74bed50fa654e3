"""NTT-friendly primes and negacyclic number-theoretic transforms.

Forward transforms leave their output in bit-reversed order; pointwise
products in that domain are negacyclic convolutions mod X^N + 1.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from sympy import isprime

from .. import kernels


def ntt_primes(bits: int, n: int, count: int, near: int | None = None,
               exclude=()) -> list[int]:
    """``count`` primes q = 1 (mod 2n) of the given bit size.

    With ``near`` the primes closest to that value (on either side, so the bit
    size may differ by one) are returned; this makes rescaling primes
    approximate the scale. Otherwise the largest ``bits``-bit primes.
    """
    step = 2 * n
    exclude = set(exclude)
    found = []
    if near is None:
        q = ((1 << bits) - 1) // step * step + 1
        while len(found) < count:
            if q < (1 << (bits - 1)):
                raise ValueError(f"not enough {bits}-bit NTT primes for n={n}")
            if q not in exclude and isprime(q):
                found.append(q)
            q -= step
        return found
    base = near // step * step + 1
    k = 0
    while len(found) < count:
        for q in ((base + k * step,) if k == 0 else (base + k * step, base - k * step)):
            if q > 2 * n and q not in exclude and isprime(q):
                found.append(q)
        k += 1
        if k > 1 << 20:
            raise ValueError("prime search exhausted")
    found.sort(key=lambda q: (abs(q - near), q))
    return found[:count]


def _bitrev(i: int, bits: int) -> int:
    return int(format(i, f"0{bits}b")[::-1], 2) if bits else 0


def _root_2n(q: int, n: int) -> int:
    """A primitive 2n-th root of unity mod q."""
    for g in range(2, q):
        psi = pow(g, (q - 1) // (2 * n), q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ValueError(f"no primitive {2 * n}-th root mod {q}")


class NttTables:
    """Twiddle tables (with Shoup companions) for one prime and ring size."""

    def __init__(self, q: int, n: int):
        if n & (n - 1) or n < 2:
            raise ValueError("ring dimension must be a power of two")
        if (q - 1) % (2 * n):
            raise ValueError(f"{q} is not 1 mod {2 * n}")
        if q >= 1 << 62:
            raise ValueError("primes must stay below 2^62")
        self.q, self.n = q, n
        bits = n.bit_length() - 1
        psi = _root_2n(q, n)
        ipsi = pow(psi, -1, q)
        powers = [1] * n
        ipowers = [1] * n
        for i in range(1, n):
            powers[i] = powers[i - 1] * psi % q
            ipowers[i] = ipowers[i - 1] * ipsi % q
        rev = [_bitrev(i, bits) for i in range(n)]
        self.psi = psi
        self.psi_rev = np.array([powers[r] for r in rev], dtype=np.uint64)
        self.ipsi_rev = np.array([ipowers[r] for r in rev], dtype=np.uint64)
        self.psi_rev_shoup = np.array([(int(w) << 64) // q for w in self.psi_rev],
                                      dtype=np.uint64)
        self.ipsi_rev_shoup = np.array([(int(w) << 64) // q for w in self.ipsi_rev],
                                       dtype=np.uint64)
        self.n_inv = pow(n, -1, q)

    def forward(self, a: np.ndarray) -> np.ndarray:
        out = np.array(a, dtype=np.uint64, copy=True)
        kernels.ntt_forward(out, self.q, self.psi_rev, self.psi_rev_shoup)
        return out

    def inverse(self, a: np.ndarray) -> np.ndarray:
        out = np.array(a, dtype=np.uint64, copy=True)
        kernels.ntt_inverse(out, self.q, self.ipsi_rev, self.ipsi_rev_shoup, self.n_inv)
        return out


@lru_cache(maxsize=64)
def tables(q: int, n: int) -> NttTables:
    return NttTables(q, n)


def ntt_forward(a: np.ndarray, q: int) -> np.ndarray:
    return tables(q, len(a)).forward(a)


def ntt_inverse(a: np.ndarray, q: int) -> np.ndarray:
    return tables(q, len(a)).inverse(a)


def negacyclic_mul(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """a * b mod (X^N + 1, q) through the NTT."""
    t = tables(q, len(a))
    return t.inverse(kernels.mul_mod(t.forward(a), t.forward(b), q))
