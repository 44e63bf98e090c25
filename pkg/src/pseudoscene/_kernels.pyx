# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_fallback.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def fps(const double[:, ::1] pos, Py_ssize_t m, Py_ssize_t start):
    cdef Py_ssize_t n = pos.shape[0]
    out_arr = np.empty(m, dtype=np.int64)
    if m == 0:
        return out_arr
    cdef cnp.int64_t[::1] out = out_arr
    cdef double[::1] mind = np.full(n, INFINITY)
    cdef Py_ssize_t i, j, last = start, best
    cdef double px, py, pz, dx, dy, dz, d, bestd
    out[0] = last
    mind[last] = -1.0
    with nogil:
        for i in range(1, m):
            px = pos[last, 0]
            py = pos[last, 1]
            pz = pos[last, 2]
            best = 0
            bestd = -INFINITY
            for j in range(n):
                if mind[j] >= 0.0:
                    dx = pos[j, 0] - px
                    dy = pos[j, 1] - py
                    dz = pos[j, 2] - pz
                    d = dx * dx + dy * dy + dz * dz
                    if d < mind[j]:
                        mind[j] = d
                if mind[j] > bestd:
                    bestd = mind[j]
                    best = j
            last = best
            mind[last] = -1.0
            out[i] = last
    return out_arr


def knn(const double[:, ::1] query, const double[:, ::1] pts, Py_ssize_t k):
    cdef Py_ssize_t m = query.shape[0], n = pts.shape[0]
    out_arr = np.empty((m, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef double[::1] bd = np.empty(k)
    cdef Py_ssize_t q, j, t, filled
    cdef double qx, qy, qz, dx, dy, dz, d
    with nogil:
        for q in range(m):
            qx = query[q, 0]
            qy = query[q, 1]
            qz = query[q, 2]
            filled = 0
            for j in range(n):
                dx = qx - pts[j, 0]
                dy = qy - pts[j, 1]
                dz = qz - pts[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if filled == k and d >= bd[k - 1]:
                    continue
                # insertion after every entry with distance <= d keeps index order on ties
                t = filled if filled < k else k - 1
                while t > 0 and bd[t - 1] > d:
                    bd[t] = bd[t - 1]
                    out[q, t] = out[q, t - 1]
                    t -= 1
                bd[t] = d
                out[q, t] = j
                if filled < k:
                    filled += 1
    return out_arr


def segment_max(const double[:, ::1] x, const cnp.int64_t[::1] seg, Py_ssize_t nseg):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j, s
    vals_arr = np.zeros((nseg, c))
    arg_arr = np.full((nseg, c), -1, dtype=np.int64)
    cdef double[:, ::1] vals = vals_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    with nogil:
        for i in range(n):
            s = seg[i]
            for j in range(c):
                if arg[s, j] < 0 or x[i, j] > vals[s, j]:
                    vals[s, j] = x[i, j]
                    arg[s, j] = i
    return vals_arr, arg_arr


def segment_sum(const double[:, ::1] x, const cnp.int64_t[::1] seg, Py_ssize_t nseg):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j, s
    out_arr = np.zeros((nseg, c))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            s = seg[i]
            for j in range(c):
                out[s, j] += x[i, j]
    return out_arr
