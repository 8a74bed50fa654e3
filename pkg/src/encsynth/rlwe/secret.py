"""Secret-key material: key generation and decryption.

This is the only module that ever holds the secret key. Server-side code
must not import it (a test enforces this).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .encoding import decode_real
from .params import RlweParams
from .scheme import (PublicKey, RelinKey, RlweCiphertext, add_mod, centered, neg_mod, ntt_rows,
                     sample_gaussian, sample_ternary, sample_uniform, to_rns)


@dataclass(frozen=True)
class SecretKey:
    s: np.ndarray  # ternary coefficients, int64
    params: RlweParams

    def ntt(self, moduli) -> np.ndarray:
        return ntt_rows(to_rns(self.s, moduli), self.params, moduli)


@dataclass(frozen=True)
class KeySet:
    secret: SecretKey
    public: PublicKey
    relin: RelinKey

    @property
    def params(self) -> RlweParams:
        return self.secret.params


def keygen(params: RlweParams, rng: np.random.Generator) -> KeySet:
    n = params.ring_dimension
    moduli = params.moduli
    ext = (*moduli, params.special)
    sk = SecretKey(sample_ternary(rng, n), params)
    s_ext = sk.ntt(ext)

    a = sample_uniform(rng, n, moduli)  # uniform residues are already "NTT form"
    e = ntt_rows(to_rns(sample_gaussian(rng, n, params.sigma), moduli), params, moduli)
    b = np.stack([add_mod(neg_mod(kernels.mul_mod(a[i], s_ext[i], q), q), e[i], q)
                  for i, q in enumerate(moduli)])
    pk = PublicKey(b, a)

    k = len(moduli)
    rb = np.empty((k, k + 1, n), dtype=np.uint64)
    ra = np.empty_like(rb)
    s2 = [kernels.mul_mod(s_ext[j], s_ext[j], q) for j, q in enumerate(ext)]
    P = params.special
    for i in range(k):
        ai = sample_uniform(rng, n, ext)
        ei = ntt_rows(to_rns(sample_gaussian(rng, n, params.sigma), ext), params, ext)
        for j, q in enumerate(ext):
            v = add_mod(neg_mod(kernels.mul_mod(ai[j], s_ext[j], q), q), ei[j], q)
            if j == i:
                v = add_mod(v, kernels.mul_scalar_mod(s2[j], P % q, q), q)
            rb[i, j] = v
            ra[i, j] = ai[j]
    return KeySet(sk, pk, RelinKey(rb, ra, params))


def _crt_centered(res: np.ndarray, moduli) -> np.ndarray:
    """Centered integers (Python ints, object array) from RNS residues."""
    Q = 1
    for q in moduli:
        Q *= q
    acc = np.zeros(res.shape[1], dtype=object)
    for i, q in enumerate(moduli):
        qi_hat = Q // q
        coef = qi_hat * pow(qi_hat % q, -1, q)
        acc = acc + res[i].astype(object) * coef
    acc = acc % Q
    half = Q // 2
    return np.where(acc > half, acc - Q, acc)


def decrypt_coeffs(ct: RlweCiphertext, sk: SecretKey) -> np.ndarray:
    """c0 + c1 s (+ c2 s^2) mod Q_level as centered integers."""
    params, moduli = ct.params, ct.moduli
    s = sk.ntt(moduli)
    m = np.empty((len(moduli), params.ring_dimension), dtype=np.uint64)
    for i, q in enumerate(moduli):
        t = params.ntt(q)
        acc = t.forward(ct.parts[0][i])
        s_pow = s[i]
        for part in ct.parts[1:]:
            acc = add_mod(acc, kernels.mul_mod(t.forward(part[i]), s_pow, q), q)
            s_pow = kernels.mul_mod(s_pow, s[i], q)
        m[i] = t.inverse(acc)
    if len(moduli) == 1:
        return centered(m[0], moduli[0]).astype(object)
    return _crt_centered(m, moduli)


def rlwe_decrypt(ct: RlweCiphertext, sk: SecretKey, scale: float,
                 count: int | None = None) -> np.ndarray:
    coeffs = decrypt_coeffs(ct, sk)
    return decode_real(np.array([float(c) for c in coeffs]), scale, count)
