# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-form kernels; same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef double complex cplx


cdef inline double abs2(cplx z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline cplx conj(cplx z) noexcept nogil:
    return z.real - 1j * z.imag


cdef int solve_inplace(cplx[:, ::1] A, cplx[::1] x) noexcept nogil:
    """Gaussian elimination with partial pivoting; ``x`` is overwritten by A^{-1} x."""
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t i, r, col, piv
    cdef double best, mag
    cdef cplx f, tmp
    for col in range(n):
        piv = col
        best = abs2(A[col, col])
        for r in range(col + 1, n):
            mag = abs2(A[r, col])
            if mag > best:
                best = mag
                piv = r
        if best == 0.0:
            return -1
        if piv != col:
            for i in range(n):
                tmp = A[col, i]
                A[col, i] = A[piv, i]
                A[piv, i] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        for r in range(col + 1, n):
            f = A[r, col] / A[col, col]
            if f != 0:
                for i in range(col, n):
                    A[r, i] = A[r, i] - f * A[col, i]
                x[r] = x[r] - f * x[col]
    for r in range(n - 1, -1, -1):
        tmp = x[r]
        for i in range(r + 1, n):
            tmp = tmp - A[r, i] * x[i]
        x[r] = tmp / A[r, r]
    return 0


cdef void projections(const cplx[:, :, ::1] b, const cplx[:, :, ::1] a,
                      cplx[:, :, ::1] s) noexcept nogil:
    # s[l, k, m] = sum_j conj(a[l, k, j]) b[m, k, j]
    cdef Py_ssize_t L = a.shape[0], K = a.shape[1]
    cdef Py_ssize_t l, k, m, j
    cdef cplx acc
    for l in range(L):
        for k in range(K):
            for m in range(L):
                acc = 0
                for j in range(L):
                    acc = acc + conj(a[l, k, j]) * b[m, k, j]
                s[l, k, m] = acc


cdef void noncoherent_sums(const double[:, :, :, ::1] c, const double[:, ::1] p,
                           double[:, ::1] cs) noexcept nogil:
    # cs[j, k] = sum_{l, q} p[l, q] c[j, k, l, q]
    cdef Py_ssize_t L = p.shape[0], K = p.shape[1]
    cdef Py_ssize_t j, k, l, q
    cdef double acc
    for j in range(L):
        for k in range(K):
            acc = 0.0
            for l in range(L):
                for q in range(K):
                    acc = acc + p[l, q] * c[j, k, l, q]
            cs[j, k] = acc


def sinr_all(const cplx[:, :, ::1] b, const double[:, :, :, ::1] c,
             const double[:, ::1] d, const double[:, ::1] p,
             const cplx[:, :, ::1] a):
    cdef Py_ssize_t L = p.shape[0], K = p.shape[1]
    cdef Py_ssize_t l, k, m, j
    cdef double own, den, a2
    s_arr = np.empty((L, K, L), dtype=np.complex128)
    cs_arr = np.empty((L, K), dtype=np.float64)
    out_arr = np.empty((L, K), dtype=np.float64)
    cdef cplx[:, :, ::1] s = s_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        projections(b, a, s)
        noncoherent_sums(c, p, cs)
        for l in range(L):
            for k in range(K):
                own = p[l, k] * abs2(s[l, k, l])
                den = 0.0
                for m in range(L):
                    if m != l:
                        den = den + p[m, k] * abs2(s[l, k, m])
                for j in range(L):
                    a2 = abs2(a[l, k, j])
                    den = den + a2 * (cs[j, k] + d[j, k])
                out[l, k] = own / den if den > 0 else 0.0
    return out_arr


def wmmse_sweep(const cplx[:, :, ::1] b, const double[:, :, :, ::1] c,
                const double[:, ::1] d, double[:, ::1] rho, cplx[:, :, ::1] a,
                const double[:, ::1] rho_max, bint update_a):
    """One u -> w -> a -> rho sweep; ``rho`` and ``a`` are updated in place."""
    cdef Py_ssize_t L = rho.shape[0], K = rho.shape[1]
    cdef Py_ssize_t l, k, m, j, q, i
    cdef double ut, e, num, den, acc, ratio
    cdef cplx own, scale
    cdef int status = 0
    cdef bint bad_mse = False

    p_arr = np.empty((L, K), dtype=np.float64)
    s_arr = np.empty((L, K, L), dtype=np.complex128)
    cs_arr = np.empty((L, K), dtype=np.float64)
    u_arr = np.zeros((L, K), dtype=np.complex128)
    w_arr = np.empty((L, K), dtype=np.float64)
    wu2_arr = np.empty((L, K), dtype=np.float64)
    C_arr = np.empty((L, L), dtype=np.complex128)
    x_arr = np.empty(L, dtype=np.complex128)
    cdef double[:, ::1] p = p_arr
    cdef cplx[:, :, ::1] s = s_arr
    cdef double[:, ::1] cs = cs_arr
    cdef cplx[:, ::1] u = u_arr
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] wu2 = wu2_arr
    cdef cplx[:, ::1] C = C_arr
    cdef cplx[::1] x = x_arr

    with nogil:
        for l in range(L):
            for k in range(K):
                p[l, k] = rho[l, k] * rho[l, k]
        projections(b, a, s)
        noncoherent_sums(c, p, cs)

        # u, w
        for l in range(L):
            for k in range(K):
                ut = 0.0
                for m in range(L):
                    ut = ut + p[m, k] * abs2(s[l, k, m])
                for j in range(L):
                    ut = ut + abs2(a[l, k, j]) * (cs[j, k] + d[j, k])
                own = s[l, k, l]
                if ut > 0:
                    u[l, k] = rho[l, k] * conj(own) / ut
                else:
                    u[l, k] = 0
                e = abs2(u[l, k]) * ut - 2.0 * rho[l, k] * (u[l, k] * own).real + 1.0
                if e <= 0:
                    bad_mse = True
                    e = 1.0
                w[l, k] = 1.0 / e

        # a
        if update_a and not bad_mse:
            for k in range(K):
                for l in range(L):
                    if u[l, k] == 0:
                        continue
                    for i in range(L):
                        for j in range(L):
                            acc = 0.0
                            C[i, j] = 0
                            for m in range(L):
                                C[i, j] = C[i, j] + p[m, k] * b[m, k, i] * conj(b[m, k, j])
                        C[i, i] = C[i, i] + cs[i, k] + d[i, k]
                        x[i] = b[l, k, i]
                    status = solve_inplace(C, x)
                    if status != 0:
                        break
                    scale = rho[l, k] / conj(u[l, k])
                    for j in range(L):
                        a[l, k, j] = scale * x[j]
                if status != 0:
                    break

        # rho
        if not bad_mse and status == 0:
            projections(b, a, s)
            for l in range(L):
                for k in range(K):
                    wu2[l, k] = w[l, k] * abs2(u[l, k])
            for l in range(L):
                for k in range(K):
                    den = 0.0
                    for m in range(L):
                        den = den + wu2[m, k] * abs2(s[m, k, l])
                    for m in range(L):
                        for q in range(K):
                            if wu2[m, q] == 0:
                                continue
                            acc = 0.0
                            for j in range(L):
                                acc = acc + abs2(a[m, q, j]) * c[j, q, l, k]
                            den = den + wu2[m, q] * acc
                    num = w[l, k] * (u[l, k] * s[l, k, l]).real
                    if num <= 0:
                        rho[l, k] = 0.0
                    elif den > 0:
                        ratio = num / den
                        rho[l, k] = ratio if ratio < rho_max[l, k] else rho_max[l, k]
                    else:
                        rho[l, k] = rho_max[l, k]

    if bad_mse:
        raise FloatingPointError("non-positive MSE in weighted-MMSE sweep")
    if status != 0:
        raise np.linalg.LinAlgError("singular LSFD system in weighted-MMSE sweep")
    return u_arr, w_arr
