# cython: language_level=3
"""Compiled hot loops: LCS length, scaled attention scores, regional fusion.

Signatures mirror lifesim.kernels.pyfallback exactly; the package selects
one backend at import time.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()


@cython.boundscheck(False)
@cython.wraparound(False)
def lcs_length(a, b):
    """Length of the longest common subsequence of two int token sequences."""
    cdef cnp.int32_t[::1] xa = np.ascontiguousarray(a, dtype=np.int32)
    cdef cnp.int32_t[::1] xb = np.ascontiguousarray(b, dtype=np.int32)
    cdef Py_ssize_t n = xa.shape[0]
    cdef Py_ssize_t m = xb.shape[0]
    if n == 0 or m == 0:
        return 0
    cdef cnp.int32_t[::1] prev = np.zeros(m + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] curr = np.zeros(m + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] tmp
    cdef Py_ssize_t i, j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if xa[i - 1] == xb[j - 1]:
                curr[j] = prev[j - 1] + 1
            elif prev[j] >= curr[j - 1]:
                curr[j] = prev[j]
            else:
                curr[j] = curr[j - 1]
        tmp = prev
        prev = curr
        curr = tmp
    return int(prev[m])


@cython.boundscheck(False)
@cython.wraparound(False)
def scaled_scores(q, k, double scale):
    """S[i, j] = dot(q[i], k[j]) * scale for row matrices q (n x d), k (m x d)."""
    cdef double[:, ::1] xq = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:, ::1] xk = np.ascontiguousarray(k, dtype=np.float64)
    cdef Py_ssize_t n = xq.shape[0]
    cdef Py_ssize_t m = xk.shape[0]
    cdef Py_ssize_t d = xq.shape[1]
    if xk.shape[1] != d:
        raise ValueError(f"inner dimensions differ: {d} vs {xk.shape[1]}")
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] xo = out
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(d):
                acc += xq[i, l] * xk[j, l]
            xo[i, j] = acc * scale
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
def fuse_rows(o_t, o_e, o_c, m_c, double alpha_e, double alpha_c):
    """Rowwise fusion: out[i] = o_t[i] + a_e*m[i]*o_e[i] + a_c*(1-m[i])*o_c[i]."""
    cdef double[:, ::1] xt = np.ascontiguousarray(o_t, dtype=np.float64)
    cdef double[:, ::1] xe = np.ascontiguousarray(o_e, dtype=np.float64)
    cdef double[:, ::1] xc = np.ascontiguousarray(o_c, dtype=np.float64)
    cdef double[::1] xm = np.ascontiguousarray(m_c, dtype=np.float64)
    cdef Py_ssize_t n = xt.shape[0]
    cdef Py_ssize_t d = xt.shape[1]
    if xe.shape[0] != n or xe.shape[1] != d or xc.shape[0] != n or xc.shape[1] != d:
        raise ValueError("fuse_rows operands must share one shape")
    if xm.shape[0] != n:
        raise ValueError(f"mask length {xm.shape[0]} != row count {n}")
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] xo = out
    cdef Py_ssize_t i, l
    cdef double mi
    for i in range(n):
        mi = xm[i]
        for l in range(d):
            xo[i, l] = xt[i, l] + alpha_e * mi * xe[i, l] + alpha_c * (1.0 - mi) * xc[i, l]
    return out
