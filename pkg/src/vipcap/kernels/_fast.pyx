# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused similarity kernels (compiled backend).

Same contracts as ``vipcap.kernels._numpy``: selections are identical; the
last-ulp similarity values may differ because summation order differs from
BLAS. Candidate/patch rows are normalized once, then scans are single-pass
without materializing the full similarity matrix.
"""

from libc.math cimport INFINITY, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline void _normalize_rows(double[:, ::1] src, double[:, ::1] dst,
                                 unsigned char[::1] zero) noexcept nogil:
    cdef Py_ssize_t n = src.shape[0], k = src.shape[1]
    cdef Py_ssize_t i, t
    cdef double acc, inv
    for i in range(n):
        acc = 0.0
        for t in range(k):
            acc += src[i, t] * src[i, t]
        if acc == 0.0:
            zero[i] = 1
            for t in range(k):
                dst[i, t] = 0.0
        else:
            zero[i] = 0
            inv = 1.0 / sqrt(acc)
            for t in range(k):
                dst[i, t] = src[i, t] * inv


def argmax_cosine(double[:, ::1] cand, double[:, ::1] patches):
    """Lowest-index argmax of cosine similarity, one per patch row."""
    cdef Py_ssize_t m = cand.shape[0], n = patches.shape[0], k = cand.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef long long[::1] out_v = out

    cand_unit_arr = np.empty((m, k), dtype=np.float64)
    patch_unit_arr = np.empty((n, k), dtype=np.float64)
    cand_zero_arr = np.empty(m, dtype=np.uint8)
    patch_zero_arr = np.empty(n, dtype=np.uint8)
    cdef double[:, ::1] cand_unit = cand_unit_arr
    cdef double[:, ::1] patch_unit = patch_unit_arr
    cdef unsigned char[::1] cand_zero = cand_zero_arr
    cdef unsigned char[::1] patch_zero = patch_zero_arr

    cdef Py_ssize_t i, j, t, best_i
    cdef double best, dot

    with nogil:
        _normalize_rows(cand, cand_unit, cand_zero)
        _normalize_rows(patches, patch_unit, patch_zero)
        for j in range(n):
            if patch_zero[j]:
                # every candidate ties at similarity 0 -> lowest index
                out_v[j] = 0
                continue
            best = -INFINITY
            best_i = 0
            for i in range(m):
                if cand_zero[i]:
                    continue  # -inf never beats best
                dot = 0.0
                for t in range(k):
                    dot += cand_unit[i, t] * patch_unit[j, t]
                if dot > best:
                    best = dot
                    best_i = i
            out_v[j] = best_i
    return out


def cosine_scores(double[:, ::1] rows, double[::1] query):
    """Cosine of every row against the query; zero norms score 0."""
    cdef Py_ssize_t n = rows.shape[0], k = rows.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef double[::1] out_v = out

    cdef Py_ssize_t i, t
    cdef double qacc = 0.0, racc, dot, qnorm

    for t in range(k):
        qacc += query[t] * query[t]
    if qacc == 0.0:
        return out
    qnorm = sqrt(qacc)

    with nogil:
        for i in range(n):
            racc = 0.0
            dot = 0.0
            for t in range(k):
                racc += rows[i, t] * rows[i, t]
                dot += rows[i, t] * query[t]
            if racc != 0.0:
                out_v[i] = dot / (sqrt(racc) * qnorm)
    return out
