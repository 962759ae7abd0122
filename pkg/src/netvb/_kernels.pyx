# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop: responsibilities and weighted moments in one pass.

Shapes: x is the row-concatenation of every node's points (P, D); offsets
(n+1,) marks node boundaries; coef (n, K), m (n, K, D) and H (n, K, D, D)
carry the per-node log-density pieces, with

    ln rho[j, k] = coef[i, k] - 0.5 (x[j] - m[i, k])' H[i, k] (x[j] - m[i, k])

for j in node i's slice. Rows of the returned r are max-shifted softmaxes of
ln rho; s0, s1, s2 are the responsibility-weighted sums of 1, x and x x' per
node and component. Inputs are trusted (no validation) and accumulation is
sequential in point order, so results are deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def fused_resp_moments(
    double[:, ::1] x,
    cnp.int64_t[::1] offsets,
    double[:, ::1] coef,
    double[:, :, ::1] m,
    double[:, :, :, ::1] H,
):
    cdef Py_ssize_t n = coef.shape[0]
    cdef Py_ssize_t K = coef.shape[1]
    cdef Py_ssize_t P = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]

    r_arr = np.zeros((P, K))
    s0_arr = np.zeros((n, K))
    s1_arr = np.zeros((n, K, D))
    s2_arr = np.zeros((n, K, D, D))
    lnrho_arr = np.empty(K)
    diff_arr = np.empty(D)

    cdef double[:, ::1] r = r_arr
    cdef double[:, ::1] s0 = s0_arr
    cdef double[:, :, ::1] s1 = s1_arr
    cdef double[:, :, :, ::1] s2 = s2_arr
    cdef double[::1] lnrho = lnrho_arr
    cdef double[::1] diff = diff_arr

    cdef Py_ssize_t i, j, k, u, v
    cdef double q, row, mx, tot, rv, xu

    for i in range(n):
        for j in range(offsets[i], offsets[i + 1]):
            mx = 0.0
            for k in range(K):
                for u in range(D):
                    diff[u] = x[j, u] - m[i, k, u]
                q = 0.0
                for u in range(D):
                    row = 0.0
                    for v in range(D):
                        row += H[i, k, u, v] * diff[v]
                    q += diff[u] * row
                lnrho[k] = coef[i, k] - 0.5 * q
                if k == 0 or lnrho[k] > mx:
                    mx = lnrho[k]
            tot = 0.0
            for k in range(K):
                rv = exp(lnrho[k] - mx)
                r[j, k] = rv
                tot += rv
            for k in range(K):
                rv = r[j, k] / tot
                r[j, k] = rv
                s0[i, k] += rv
                for u in range(D):
                    xu = x[j, u]
                    s1[i, k, u] += rv * xu
                    for v in range(D):
                        s2[i, k, u, v] += rv * xu * x[j, v]

    return r_arr, s0_arr, s1_arr, s2_arr
