# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled round kernels: OR-channel feedback and bit transposes.

Mirrors beepnet.kernel.fallback exactly; equality of the two is covered by
tests and exploited for non-circular trace validation.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

IMPL = "compiled"

ctypedef cnp.uint64_t u64
ctypedef cnp.int64_t i64


def noise_rounds(cnp.ndarray[u64, ndim=2] adj, cnp.ndarray[u64, ndim=2] beeps):
    cdef Py_ssize_t n = adj.shape[0]
    cdef Py_ssize_t w = adj.shape[1]
    cdef Py_ssize_t t = beeps.shape[0]
    cdef cnp.ndarray[u64, ndim=2] out = np.zeros((t, w), dtype=np.uint64)
    cdef Py_ssize_t ti, v, k
    cdef u64 acc
    for ti in range(t):
        for v in range(n):
            acc = 0
            for k in range(w):
                acc |= adj[v, k] & beeps[ti, k]
            if acc != 0:
                out[ti, v >> 6] |= (<u64>1) << (v & 63)
    return out


def or_neighbor_patterns(cnp.ndarray[i64, ndim=1] indptr,
                         cnp.ndarray[i64, ndim=1] indices,
                         cnp.ndarray[u64, ndim=2] patterns):
    cdef Py_ssize_t n = patterns.shape[0]
    cdef Py_ssize_t p = patterns.shape[1]
    cdef cnp.ndarray[u64, ndim=2] out = np.zeros((n, p), dtype=np.uint64)
    cdef Py_ssize_t v, j, k
    cdef i64 u
    for v in range(n):
        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            for k in range(p):
                out[v, k] |= patterns[u, k]
    return out


def expand_patterns(cnp.ndarray[u64, ndim=2] patterns, Py_ssize_t t):
    cdef Py_ssize_t n = patterns.shape[0]
    cdef Py_ssize_t w = (n + 63) >> 6
    cdef cnp.ndarray[u64, ndim=2] out = np.zeros((t, w), dtype=np.uint64)
    cdef Py_ssize_t v, r
    for v in range(n):
        for r in range(t):
            if (patterns[v, r >> 6] >> (r & 63)) & 1:
                out[r, v >> 6] |= (<u64>1) << (v & 63)
    return out


def collapse_rounds(cnp.ndarray[u64, ndim=2] rows, Py_ssize_t n):
    cdef Py_ssize_t t = rows.shape[0]
    cdef Py_ssize_t p = (t + 63) >> 6
    cdef cnp.ndarray[u64, ndim=2] out = np.zeros((n, p), dtype=np.uint64)
    cdef Py_ssize_t v, r
    for r in range(t):
        for v in range(n):
            if (rows[r, v >> 6] >> (v & 63)) & 1:
                out[v, r >> 6] |= (<u64>1) << (r & 63)
    return out
