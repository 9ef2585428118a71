# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of _pykernels; same contracts, loop-based inner kernels."""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()

ACT_NONE = 0
ACT_TANH = 1


def sparse_matvec(indptr, term_ids, weights, qdense):
    """Dot product of a dense query vector against every CSR row."""
    cdef cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] tid = np.ascontiguousarray(term_ids, dtype=np.int64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] q = np.ascontiguousarray(qdense, dtype=np.float64)
    cdef Py_ssize_t n = ip.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e
    cdef double acc
    for i in range(n):
        acc = 0.0
        for e in range(ip[i], ip[i + 1]):
            acc += w[e] * q[tid[e]]
        out[i] = acc
    return out_arr


def gated_mean_layer(indptr, src, gate_self, gate_edge, x, proj, bias, act):
    """One round of gated message passing with mean aggregation.

    Same semantics as _pykernels.gated_mean_layer; the projection uses BLAS
    and the per-edge gather/gate/activate/accumulate runs as C loops.
    """
    p_arr = np.ascontiguousarray(
        np.dot(np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(proj, dtype=np.float64).T)
    )
    cdef cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] sidx = np.ascontiguousarray(src, dtype=np.int64)
    cdef double[::1] gself = np.ascontiguousarray(gate_self, dtype=np.float64)
    cdef double[::1] gedge = np.ascontiguousarray(gate_edge, dtype=np.float64)
    cdef double[:, ::1] p = p_arr
    cdef double[::1] b = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t n = ip.shape[0] - 1
    cdef Py_ssize_t r = p_arr.shape[1]
    out_arr = np.empty((n, r), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef bint use_tanh = act == ACT_TANH
    cdef Py_ssize_t i, e, j, c
    cdef double g, v, denom
    for i in range(n):
        g = gself[i]
        for c in range(r):
            v = g * p[i, c] + b[c]
            out[i, c] = tanh(v) if use_tanh else v
        for e in range(ip[i], ip[i + 1]):
            j = sidx[e]
            g = gedge[e]
            for c in range(r):
                v = g * p[j, c] + b[c]
                out[i, c] += tanh(v) if use_tanh else v
        denom = 1.0 + (ip[i + 1] - ip[i])
        for c in range(r):
            out[i, c] /= denom
    return out_arr
