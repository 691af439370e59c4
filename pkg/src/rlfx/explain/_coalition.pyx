# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled coalition kernels; same contract as ``_coalition_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def coalition_batch(const double[::1] x, const double[:, ::1] bg, const cnp.int64_t[:, ::1] perms,
                    const cnp.int64_t[::1] bg_idx):
    cdef Py_ssize_t P = perms.shape[0], M = perms.shape[1]
    cdef Py_ssize_t p, k, j, row
    out_arr = np.empty(((M + 1) * P, M), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for p in range(P):
            row = p * (M + 1)
            for j in range(M):
                out[row, j] = bg[bg_idx[p], j]
            for k in range(M):
                for j in range(M):
                    out[row + k + 1, j] = out[row + k, j]
                out[row + k + 1, perms[p, k]] = x[perms[p, k]]
    return out_arr


def scatter_marginals(const double[::1] preds, const cnp.int64_t[:, ::1] perms):
    cdef Py_ssize_t P = perms.shape[0], M = perms.shape[1]
    cdef Py_ssize_t p, k, row
    out_arr = np.empty((P, M), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for p in range(P):
            row = p * (M + 1)
            for k in range(M):
                out[p, perms[p, k]] = preds[row + k + 1] - preds[row + k]
    return out_arr
