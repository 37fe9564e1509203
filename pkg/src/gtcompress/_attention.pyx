# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-edge attention kernel.

Single hot loop of the forward pass: edge scores, numerically stable
segment softmax, and weighted neighbor pooling, all in one sweep over
the CSR edge structure. The pure-python twin lives in _attention_py.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def edge_attention(
    double[:, ::1] q,
    double[:, ::1] k,
    double[:, ::1] v,
    cnp.intp_t[::1] indptr,
    cnp.intp_t[::1] targets,
    double scale,
):
    """Attention-weighted neighbor pooling over a CSR edge list.

    q, k: (n, dqk) query/key rows per node. v: (n, dv) value rows.
    indptr/targets: CSR adjacency; edge e in [indptr[i], indptr[i+1])
    points from node i to targets[e]. Every segment must be nonempty.
    scale multiplies each raw score.

    Returns (pooled, att): pooled is (n, dv), att is the per-edge
    softmax weight aligned with targets.
    """
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t dqk = q.shape[1]
    cdef Py_ssize_t dv = v.shape[1]
    cdef Py_ssize_t m = targets.shape[0]

    pooled_arr = np.zeros((n, dv), dtype=np.float64)
    att_arr = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] pooled = pooled_arr
    cdef double[::1] att = att_arr

    cdef Py_ssize_t i, e, j, c, lo, hi
    cdef double s, mx, z, w

    for i in range(n):
        lo = indptr[i]
        hi = indptr[i + 1]
        mx = -1e308
        for e in range(lo, hi):
            j = targets[e]
            s = 0.0
            for c in range(dqk):
                s += q[i, c] * k[j, c]
            s *= scale
            att[e] = s
            if s > mx:
                mx = s
        z = 0.0
        for e in range(lo, hi):
            w = exp(att[e] - mx)
            att[e] = w
            z += w
        for e in range(lo, hi):
            w = att[e] / z
            att[e] = w
            j = targets[e]
            for c in range(dv):
                pooled[i, c] += w * v[j, c]

    return pooled_arr, att_arr
