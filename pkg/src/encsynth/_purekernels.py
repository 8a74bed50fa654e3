"""Pure-Python twins of the routines in ``_kernels.pyx``.

Modular arithmetic is carried out on numpy object arrays (Python integers) so
that 60-bit products never overflow; results are converted back to uint64.
The Z-learning sweep is a plain loop with the exact same floating-point
operation order as the compiled version.
"""

import numpy as np


def _obj(a):
    return np.asarray(a, dtype=np.uint64).astype(object)


def ntt_forward(a, q, psi_rev, psi_rev_shoup=None):
    n = a.shape[0]
    q = int(q)
    v = _obj(a)
    psi = _obj(psi_rev)
    t, m = n, 1
    while m < n:
        t >>= 1
        blocks = v.reshape(m, 2, t)
        u = blocks[:, 0, :]
        w = (blocks[:, 1, :] * psi[m:2 * m, None]) % q
        hi = (u + w) % q
        lo = (u - w) % q
        blocks[:, 0, :] = hi
        blocks[:, 1, :] = lo
        v = blocks.reshape(n)
        m <<= 1
    a[:] = v.astype(np.uint64)


def ntt_inverse(a, q, ipsi_rev, ipsi_rev_shoup=None, n_inv=1):
    n = a.shape[0]
    q = int(q)
    v = _obj(a)
    ipsi = _obj(ipsi_rev)
    t, m = 1, n
    while m > 1:
        h = m >> 1
        blocks = v.reshape(h, 2, t)
        u = blocks[:, 0, :]
        w = blocks[:, 1, :]
        s = (u + w) % q
        d = ((u - w) * ipsi[h:2 * h, None]) % q
        blocks[:, 0, :] = s
        blocks[:, 1, :] = d
        v = blocks.reshape(n)
        t <<= 1
        m = h
    a[:] = ((v * int(n_inv)) % q).astype(np.uint64)


def mul_mod(a, b, q):
    return ((_obj(a) * _obj(b)) % int(q)).astype(np.uint64)


def mul_scalar_mod(a, s, q):
    return ((_obj(a) * int(s)) % int(q)).astype(np.uint64)


def _draw(cdf_row, u):
    k = 0
    last = len(cdf_row) - 1
    while k < last and cdf_row[k] <= u:
        k += 1
    return k


def zlearn_episode(next_state, cdf, factor, absorbing, z, counts, kappa, x0, uniforms):
    nxt = next_state.tolist()
    cdf_l = cdf.tolist()
    fac = factor.tolist()
    absorbing = absorbing.tolist()
    x = int(x0)
    steps = 0
    absorbed = False
    for u_draw in uniforms.tolist():
        u = _draw(cdf_l[x], u_draw)
        xn = nxt[x][u]
        f = fac[x][u]
        a = kappa / (kappa + float(counts[x]))
        counts[x] += 1
        z[x] = (1.0 - a) * z[x] + a * (f * z[xn])
        steps += 1
        if absorbing[xn]:
            absorbed = True
            break
        x = xn
    return steps, absorbed


def sample_path(next_state, cdf, absorbing, x0, uniforms, states, actions):
    nxt = next_state.tolist()
    cdf_l = cdf.tolist()
    absorbing = absorbing.tolist()
    x = int(x0)
    steps = 0
    absorbed = False
    for t, u_draw in enumerate(uniforms.tolist()):
        u = _draw(cdf_l[x], u_draw)
        xn = nxt[x][u]
        states[t] = x
        actions[t] = u
        steps += 1
        if absorbing[xn]:
            absorbed = True
            break
        x = xn
    return steps, absorbed
