# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: negacyclic NTT over 64-bit word primes and the
per-episode Z-learning sweep.

Every routine here has a line-for-line twin in ``_purekernels`` that must
produce identical results (bit-identical for the floating-point sweep).
"""

import numpy as np
cimport numpy as cnp

from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef extern from *:
    """
    typedef unsigned __int128 u128;
    """
    ctypedef unsigned long long u128


cdef inline uint64_t _mulmod(uint64_t a, uint64_t b, uint64_t q) nogil:
    return <uint64_t>((<u128>a * b) % q)


cdef inline uint64_t _mul_shoup(uint64_t a, uint64_t w, uint64_t w_shoup,
                                uint64_t q) nogil:
    # w_shoup = floor(w * 2^64 / q); valid for q < 2^63
    cdef uint64_t hi = <uint64_t>(((<u128>a) * w_shoup) >> 64)
    cdef uint64_t r = a * w - hi * q
    if r >= q:
        r -= q
    return r


def ntt_forward(uint64_t[::1] a, uint64_t q, uint64_t[::1] psi_rev,
                uint64_t[::1] psi_rev_shoup):
    """In-place forward negacyclic NTT (Cooley-Tukey, bit-reversed twiddles)."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t t = n, m = 1, i, j, j1, j2
    cdef uint64_t s, sp, u, v
    with nogil:
        while m < n:
            t >>= 1
            for i in range(m):
                j1 = 2 * i * t
                j2 = j1 + t
                s = psi_rev[m + i]
                sp = psi_rev_shoup[m + i]
                for j in range(j1, j2):
                    u = a[j]
                    v = _mul_shoup(a[j + t], s, sp, q)
                    a[j] = u + v
                    if a[j] >= q:
                        a[j] -= q
                    a[j + t] = u + q - v
                    if a[j + t] >= q:
                        a[j + t] -= q
            m <<= 1


def ntt_inverse(uint64_t[::1] a, uint64_t q, uint64_t[::1] ipsi_rev,
                uint64_t[::1] ipsi_rev_shoup, uint64_t n_inv):
    """In-place inverse negacyclic NTT (Gentleman-Sande), scaled by 1/n."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t t = 1, m = n, h, i, j, j1, j2
    cdef uint64_t s, sp, u, v
    with nogil:
        while m > 1:
            j1 = 0
            h = m >> 1
            for i in range(h):
                j2 = j1 + t
                s = ipsi_rev[h + i]
                sp = ipsi_rev_shoup[h + i]
                for j in range(j1, j2):
                    u = a[j]
                    v = a[j + t]
                    a[j] = u + v
                    if a[j] >= q:
                        a[j] -= q
                    a[j + t] = _mul_shoup(u + q - v, s, sp, q)
                j1 += 2 * t
            t <<= 1
            m = h
        for j in range(n):
            a[j] = _mulmod(a[j], n_inv, q)


def mul_mod(uint64_t[::1] a, uint64_t[::1] b, uint64_t q):
    """Elementwise a*b mod q."""
    cdef Py_ssize_t n = a.shape[0], i
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _mulmod(a[i], b[i], q)
    return out


def mul_scalar_mod(uint64_t[::1] a, uint64_t s, uint64_t q):
    """Elementwise a*s mod q for a scalar s < q."""
    cdef Py_ssize_t n = a.shape[0], i
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _mulmod(a[i], s, q)
    return out


cdef inline Py_ssize_t _draw(const double[:, ::1] cdf, Py_ssize_t x,
                             double u) nogil:
    # first action whose cumulative mass exceeds u (searchsorted 'right')
    cdef Py_ssize_t k = 0, last = cdf.shape[1] - 1
    while k < last and cdf[x, k] <= u:
        k += 1
    return k


def zlearn_episode(const int64_t[:, ::1] next_state, const double[:, ::1] cdf,
                   const double[:, ::1] factor, const unsigned char[::1] absorbing,
                   double[::1] z, int64_t[::1] counts, double kappa,
                   Py_ssize_t x0, const double[::1] uniforms):
    """Run one behaviour-policy episode from ``x0`` applying the Z update in place.

    Returns (steps taken, absorbed flag).
    """
    cdef Py_ssize_t x = x0, xn, u, t, steps = 0
    cdef Py_ssize_t horizon = uniforms.shape[0]
    cdef double a, f
    cdef bint absorbed = False
    with nogil:
        for t in range(horizon):
            u = _draw(cdf, x, uniforms[t])
            xn = next_state[x, u]
            f = factor[x, u]
            a = kappa / (kappa + <double>counts[x])
            counts[x] += 1
            z[x] = (1.0 - a) * z[x] + a * (f * z[xn])
            steps += 1
            if absorbing[xn]:
                absorbed = True
                break
            x = xn
    return steps, absorbed


def sample_path(const int64_t[:, ::1] next_state, const double[:, ::1] cdf,
                const unsigned char[::1] absorbing, Py_ssize_t x0,
                const double[::1] uniforms, int64_t[::1] states,
                int64_t[::1] actions):
    """Fill ``states``/``actions`` with one episode; returns (steps, absorbed)."""
    cdef Py_ssize_t x = x0, xn, u, t, steps = 0
    cdef Py_ssize_t horizon = uniforms.shape[0]
    cdef bint absorbed = False
    with nogil:
        for t in range(horizon):
            u = _draw(cdf, x, uniforms[t])
            xn = next_state[x, u]
            states[t] = x
            actions[t] = u
            steps += 1
            if absorbing[xn]:
                absorbed = True
                break
            x = xn
    return steps, absorbed
