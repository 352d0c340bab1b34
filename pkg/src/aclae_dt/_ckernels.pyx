# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(double[:, :, :, ::1] xp, Py_ssize_t f, Py_ssize_t stride,
           Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ncols = n * ho * wo
    out = np.empty((c * f * f, ncols), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t ci, ki, kj, b, i, j, row, col
    with nogil:
        for ci in range(c):
            for ki in range(f):
                for kj in range(f):
                    row = (ci * f + ki) * f + kj
                    col = 0
                    for b in range(n):
                        for i in range(ho):
                            for j in range(wo):
                                cols[row, col] = xp[b, ci, i * stride + ki, j * stride + kj]
                                col += 1
    return out


def col2im(double[:, ::1] cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t hp,
           Py_ssize_t wp, Py_ssize_t f, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] dxp = out
    cdef Py_ssize_t ci, ki, kj, b, i, j, row, col
    with nogil:
        for ci in range(c):
            for ki in range(f):
                for kj in range(f):
                    row = (ci * f + ki) * f + kj
                    col = 0
                    for b in range(n):
                        for i in range(ho):
                            for j in range(wo):
                                dxp[b, ci, i * stride + ki, j * stride + kj] += cols[row, col]
                                col += 1
    return out


def maxpool2x2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 1) // 2, wo = (w + 1) // 2
    out_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ci, i, j, di, dj, r, q, best_i
    cdef double best, v
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best_i = (2 * i) * w + 2 * j
                        best = x[b, ci, 2 * i, 2 * j]
                        for di in range(2):
                            r = 2 * i + di
                            if r >= h:
                                break
                            for dj in range(2):
                                q = 2 * j + dj
                                if q >= w:
                                    break
                                v = x[b, ci, r, q]
                                if v > best:
                                    best = v
                                    best_i = r * w + q
                        out[b, ci, i, j] = best
                        idx[b, ci, i, j] = best_i
    return out_arr, idx_arr


def maxpool2x2_backward(double[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] argmax,
                        Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ci, i, j, k
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        k = argmax[b, ci, i, j]
                        dx[b, ci, k // w, k % w] += grad[b, ci, i, j]
    return out


def upsample2x2_backward(double[:, :, :, ::1] grad, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ht = grad.shape[2], wt = grad.shape[3]
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ci, i, j
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ht):
                    for j in range(wt):
                        dx[b, ci, i // 2, j // 2] += grad[b, ci, i, j]
    return out


def window_gram(double[:, ::1] series, starts, Py_ssize_t d):
    cdef cnp.int64_t[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t k = st.shape[0], n = series.shape[1]
    out = np.zeros((k, n, n), dtype=np.float64)
    cdef double[:, :, ::1] m = out
    cdef Py_ssize_t w, t, i, j, t0
    cdef double xi, acc
    with nogil:
        for w in range(k):
            t0 = st[w]
            for i in range(n):
                for j in range(i, n):
                    acc = 0.0
                    for t in range(d):
                        acc = acc + series[t0 + t, i] * series[t0 + t, j]
                    acc = acc / d
                    m[w, i, j] = acc
                    m[w, j, i] = acc
    return out
