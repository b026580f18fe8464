# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hashed-token embedder and the cosine scan.

Must stay bit-for-bit identical to ``_pykernels``: no fast-math, no FMA
contraction, and the scan accumulates in ascending coordinate order.
"""

import numpy as np

from libc.stdint cimport int64_t, uint64_t

cdef uint64_t FNV_OFFSET = 14695981039346656037ULL
cdef uint64_t FNV_PRIME = 1099511628211ULL


cpdef uint64_t fnv1a_64(bytes data):
    cdef const unsigned char* p = data
    cdef Py_ssize_t i, n = len(data)
    cdef uint64_t h = FNV_OFFSET
    for i in range(n):
        h ^= p[i]
        h *= FNV_PRIME
    return h


def bucket_counts(list tokens, Py_ssize_t dim):
    out = np.zeros(dim, dtype=np.int64)
    cdef int64_t[::1] counts = out
    cdef uint64_t d = <uint64_t>dim
    for tok in tokens:
        counts[fnv1a_64((<str>tok).encode("utf-8")) % d] += 1
    return out


def scan_scores(const double[:, ::1] matrix, const double[::1] query, const Py_ssize_t[::1] nz):
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t m = nz.shape[0]
    cdef Py_ssize_t j, t, i
    cdef double acc
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] scores = out
    for j in range(n):
        acc = 0.0
        for t in range(m):
            i = nz[t]
            acc = acc + query[i] * matrix[j, i]
        scores[j] = acc
    return out
