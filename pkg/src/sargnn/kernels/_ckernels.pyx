# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels. See ``_pykernels`` for semantics."""

import numpy as np

CHILDREN = ((0, 0), (0, 1), (1, 0), (1, 1))


def neighbor_sum(const double[:, :, :, ::1] x, offsets):
    cdef Py_ssize_t nb = x.shape[0], h = x.shape[1], w = x.shape[2], nc = x.shape[3]
    cdef const long[:, ::1] offs = np.ascontiguousarray(np.reshape(offsets, (-1, 2)), dtype=np.int_)
    cdef Py_ssize_t nk = offs.shape[0]
    out_arr = np.zeros((nb, h, w, nc))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, k, c, ii, jj
    cdef double *dst
    cdef const double *src
    with nogil:
        for b in range(nb):
            for i in range(h):
                for j in range(w):
                    dst = &out[b, i, j, 0]
                    for k in range(nk):
                        ii = i + offs[k, 0]
                        jj = j + offs[k, 1]
                        if ii < 0 or ii >= h or jj < 0 or jj >= w:
                            continue
                        src = &x[b, ii, jj, 0]
                        for c in range(nc):
                            dst[c] += src[c]
    return out_arr


def pool_max(const double[:, :, :, ::1] x, exists):
    cdef Py_ssize_t nb = x.shape[0], h = x.shape[1], w = x.shape[2], nc = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    cdef const unsigned char[:, :, ::1] ex = np.ascontiguousarray(exists, dtype=np.uint8)
    out_arr = np.zeros((nb, h2, w2, nc))
    oex_arr = np.zeros((nb, h2, w2), dtype=bool)
    arg_arr = np.full((nb, h2, w2, nc), -1, dtype=np.int8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, ::1] oex = oex_arr.view(np.uint8)
    cdef signed char[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, i, j, k, c, ci, cj
    cdef double v
    with nogil:
        for b in range(nb):
            for i in range(h2):
                for j in range(w2):
                    for k in range(4):
                        ci = 2 * i + (k >> 1)
                        cj = 2 * j + (k & 1)
                        if not ex[b, ci, cj]:
                            continue
                        if not oex[b, i, j]:
                            oex[b, i, j] = 1
                            for c in range(nc):
                                out[b, i, j, c] = x[b, ci, cj, c]
                                arg[b, i, j, c] = <signed char>k
                        else:
                            for c in range(nc):
                                v = x[b, ci, cj, c]
                                if v > out[b, i, j, c]:
                                    out[b, i, j, c] = v
                                    arg[b, i, j, c] = <signed char>k
    return out_arr, oex_arr, arg_arr


def pool_max_backward(const double[:, :, :, ::1] grad, const signed char[:, :, :, ::1] arg):
    cdef Py_ssize_t nb = grad.shape[0], h2 = grad.shape[1], w2 = grad.shape[2], nc = grad.shape[3]
    out_arr = np.zeros((nb, 2 * h2, 2 * w2, nc))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, c
    cdef signed char k
    with nogil:
        for b in range(nb):
            for i in range(h2):
                for j in range(w2):
                    for c in range(nc):
                        k = arg[b, i, j, c]
                        if k >= 0:
                            out[b, 2 * i + (k >> 1), 2 * j + (k & 1), c] = grad[b, i, j, c]
    return out_arr


def csr_matvec(const long[::1] indptr, const long[::1] indices, const double[::1] data,
               const double[::1] x, Py_ssize_t nrows):
    y_arr = np.zeros(nrows)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t r, p
    cdef double acc
    with nogil:
        for r in range(nrows):
            acc = 0.0
            for p in range(indptr[r], indptr[r + 1]):
                acc = acc + data[p] * x[indices[p]]
            y[r] = acc
    return y_arr


def dense_csr_matmul(const double[:, ::1] x, const long[::1] indptr, const long[::1] indices,
                     const double[::1] data, Py_ssize_t ncols):
    cdef Py_ssize_t n = x.shape[0], nrows = x.shape[1]
    out_arr = np.zeros((n, ncols))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, r, p
    cdef double xv
    with nogil:
        for i in range(n):
            for r in range(nrows):
                xv = x[i, r]
                if xv == 0.0:
                    continue
                for p in range(indptr[r], indptr[r + 1]):
                    out[i, indices[p]] += xv * data[p]
    return out_arr


def neighbor_mean(const double[:, :, :, ::1] x, exists, offsets):
    cdef Py_ssize_t nb = x.shape[0], h = x.shape[1], w = x.shape[2], nc = x.shape[3]
    cdef const unsigned char[:, :, ::1] ex = np.ascontiguousarray(exists, dtype=np.uint8)
    cdef const long[:, ::1] offs = np.ascontiguousarray(np.reshape(offsets, (-1, 2)), dtype=np.int_)
    cdef Py_ssize_t nk = offs.shape[0]
    out_arr = np.zeros((nb, h, w, nc))
    inv_arr = np.zeros((nb, h, w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, ::1] inv = inv_arr
    cdef Py_ssize_t b, i, j, k, c, ii, jj, cnt
    cdef double s
    cdef double *dst
    cdef const double *src
    with nogil:
        for b in range(nb):
            for i in range(h):
                for j in range(w):
                    if not ex[b, i, j]:
                        continue
                    dst = &out[b, i, j, 0]
                    cnt = 0
                    for k in range(nk):
                        ii = i + offs[k, 0]
                        jj = j + offs[k, 1]
                        if ii < 0 or ii >= h or jj < 0 or jj >= w or not ex[b, ii, jj]:
                            continue
                        cnt = cnt + 1
                        src = &x[b, ii, jj, 0]
                        for c in range(nc):
                            dst[c] += src[c]
                    s = 1.0 / (cnt if cnt > 0 else 1)
                    inv[b, i, j] = s
                    for c in range(nc):
                        dst[c] *= s
    return out_arr, inv_arr


def neighbor_sum_scaled(const double[:, :, :, ::1] g, const double[:, :, ::1] scale, offsets):
    cdef Py_ssize_t nb = g.shape[0], h = g.shape[1], w = g.shape[2], nc = g.shape[3]
    cdef const long[:, ::1] offs = np.ascontiguousarray(np.reshape(offsets, (-1, 2)), dtype=np.int_)
    cdef Py_ssize_t nk = offs.shape[0]
    out_arr = np.zeros((nb, h, w, nc))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, k, c, ii, jj
    cdef double s
    cdef double *dst
    cdef const double *src
    with nogil:
        for b in range(nb):
            for i in range(h):
                for j in range(w):
                    dst = &out[b, i, j, 0]
                    for k in range(nk):
                        ii = i + offs[k, 0]
                        jj = j + offs[k, 1]
                        if ii < 0 or ii >= h or jj < 0 or jj >= w:
                            continue
                        s = scale[b, ii, jj]
                        if s == 0.0:
                            continue
                        src = &g[b, ii, jj, 0]
                        for c in range(nc):
                            dst[c] += s * src[c]
    return out_arr
