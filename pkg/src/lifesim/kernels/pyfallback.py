"""Pure-Python mirror of the compiled kernels.

Used when the Cython extension is unavailable (no compiler, source checkout
without a build step). Deliberately plain loops so results match the
extension bit for bit; see benchmarks/bench_kernels.py for the cost.
"""

from __future__ import annotations

import numpy as np


def lcs_length(a, b) -> int:
    """Length of the longest common subsequence of two int token sequences."""
    xa = list(a)
    xb = list(b)
    n, m = len(xa), len(xb)
    if n == 0 or m == 0:
        return 0
    prev = [0] * (m + 1)
    curr = [0] * (m + 1)
    for i in range(1, n + 1):
        ai = xa[i - 1]
        for j in range(1, m + 1):
            if ai == xb[j - 1]:
                curr[j] = prev[j - 1] + 1
            elif prev[j] >= curr[j - 1]:
                curr[j] = prev[j]
            else:
                curr[j] = curr[j - 1]
        prev, curr = curr, prev
    return prev[m]


def scaled_scores(q, k, scale: float) -> np.ndarray:
    """S[i, j] = dot(q[i], k[j]) * scale for row matrices q (n x d), k (m x d)."""
    xq = np.ascontiguousarray(q, dtype=np.float64)
    xk = np.ascontiguousarray(k, dtype=np.float64)
    n, d = xq.shape
    m = xk.shape[0]
    if xk.shape[1] != d:
        raise ValueError(f"inner dimensions differ: {d} vs {xk.shape[1]}")
    out = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(d):
                acc += xq[i, l] * xk[j, l]
            out[i, j] = acc * scale
    return out


def fuse_rows(o_t, o_e, o_c, m_c, alpha_e: float, alpha_c: float) -> np.ndarray:
    """Rowwise fusion: out[i] = o_t[i] + a_e*m[i]*o_e[i] + a_c*(1-m[i])*o_c[i]."""
    xt = np.ascontiguousarray(o_t, dtype=np.float64)
    xe = np.ascontiguousarray(o_e, dtype=np.float64)
    xc = np.ascontiguousarray(o_c, dtype=np.float64)
    xm = np.ascontiguousarray(m_c, dtype=np.float64)
    n, d = xt.shape
    if xe.shape != (n, d) or xc.shape != (n, d):
        raise ValueError("fuse_rows operands must share one shape")
    if xm.shape[0] != n:
        raise ValueError(f"mask length {xm.shape[0]} != row count {n}")
    out = np.empty((n, d), dtype=np.float64)
    for i in range(n):
        mi = xm[i]
        for l in range(d):
            out[i, l] = xt[i, l] + alpha_e * mi * xe[i, l] + alpha_c * (1.0 - mi) * xc[i, l]
    return out
