"""Numpy implementation of the closed-form kernels.

Layouts (L cells, K users per cell):

* ``b[l, k, j]``     complex, desired-signal coefficient of user (l, k) at BS j
* ``c[j, k, l, q]``  real, non-coherent term at BS j's combiner for pilot k
  caused by user (l, q)
* ``d[j, k]``        real, noise term
* ``a[l, k, j]``     complex LSFD weight of user (l, k) on BS j
* ``p``, ``rho``     (L, K) powers and their square roots

This module mirrors ``_ckernels.pyx`` exactly; both are tested against each other.
"""

import numpy as np


def _projections(b, a):
    # s[l, k, m] = sum_j conj(a[l, k, j]) b[m, k, j]
    return np.einsum("lkj,mkj->lkm", np.conj(a), b)


def _noncoherent(c, d, p, a):
    cs = np.einsum("jklq,lq->jk", c, p)  # (j, k)
    a2 = np.abs(a) ** 2  # (l, k, j)
    return np.einsum("lkj,jk->lk", a2, cs) + np.einsum("lkj,jk->lk", a2, d), cs


def sinr_all(b, c, d, p, a):
    L, K = p.shape
    s = _projections(b, a)
    coherent = np.abs(s) ** 2 * p.T[None, :, :]  # p[m, k] on axis m
    own = coherent[np.arange(L), :, np.arange(L)]  # (l, k)
    pc = coherent.sum(axis=-1) - own
    nc, _ = _noncoherent(c, d, p, a)
    den = pc + nc
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, own / np.where(den > 0, den, 1.0), 0.0)
    return out


def wmmse_sweep(b, c, d, rho, a, rho_max, update_a):
    """One u -> w -> a -> rho sweep; ``rho`` and ``a`` are updated in place.

    Returns ``(u, w)``.
    """
    L, K = rho.shape
    ar = np.arange(L)
    p = rho ** 2

    # u and w from the incoming (rho, a)
    s = _projections(b, a)
    coherent = np.abs(s) ** 2 * p.T[None, :, :]
    nc, cs = _noncoherent(c, d, p, a)
    u_tilde = coherent.sum(axis=-1) + nc
    own = s[ar, :, ar]  # (l, k): a^H b_{l,k}
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(u_tilde > 0, rho * np.conj(own) / np.where(u_tilde > 0, u_tilde, 1.0), 0.0)
    e = np.abs(u) ** 2 * u_tilde - 2.0 * rho * np.real(u * own) + 1.0
    if np.any(e <= 0):
        raise FloatingPointError("non-positive MSE in weighted-MMSE sweep")
    w = 1.0 / e

    if update_a:
        # C~_k depends on the pilot index only
        for k in range(K):
            bk = b[:, k, :]  # (l', j)
            C = np.einsum("l,lj,li->ji", p[:, k], bk, np.conj(bk))
            C[np.diag_indices(L)] += cs[:, k] + d[:, k]
            X = np.linalg.solve(C, bk.T)  # column l is C^{-1} b_{l,k}
            for l in range(L):
                if u[l, k] != 0:
                    a[l, k, :] = rho[l, k] / np.conj(u[l, k]) * X[:, l]

    # rho with the refreshed a
    s = _projections(b, a)
    own = s[ar, :, ar]
    wu2 = w * np.abs(u) ** 2  # (l, k)
    # coherent: sum_l' wu2[l', k] |s[l', k, l]|^2
    D = np.einsum("mk,mkl->lk", wu2, np.abs(s) ** 2)
    # non-coherent: sum_{l', k'} wu2[l', k'] sum_j |a[l', k', j]|^2 c[j, k', l, k]
    D += np.einsum("mq,mqj,jqlk->lk", wu2, np.abs(a) ** 2, c)
    N = w * np.real(u * own)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(D > 0, N / np.where(D > 0, D, 1.0), rho_max)
    rho[...] = np.where(N <= 0, 0.0, np.minimum(ratio, rho_max))
    return u, w
