# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def gather_sum(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices, const double[:, ::1] x):
    """Segment-wise gather-sum: out[v] = sum of x[indices[indptr[v]:indptr[v+1]]]."""
    cdef Py_ssize_t n_out = indptr.shape[0] - 1
    cdef Py_ssize_t width = x.shape[1]
    out_arr = np.zeros((n_out, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t v, j, c, src
    with nogil:
        for v in range(n_out):
            for j in range(indptr[v], indptr[v + 1]):
                src = indices[j]
                for c in range(width):
                    out[v, c] += x[src, c]
    return out_arr


def unit_rows(const double[:, ::1] x):
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t width = x.shape[1]
    out_arr = np.empty((n, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, c
    cdef double sq, nrm
    with nogil:
        for i in range(n):
            sq = 0.0
            for c in range(width):
                sq += x[i, c] * x[i, c]
            if sq == 0.0:
                for c in range(width):
                    out[i, c] = 0.0
            else:
                nrm = sqrt(sq)
                for c in range(width):
                    out[i, c] = x[i, c] / nrm
    return out_arr
