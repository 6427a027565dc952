# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gather/scatter kernels: im2col/col2im and max pooling.

Hot inner loops of convolution and pooling; the matching pure-numpy
implementations live in kernels_py.py and share the same contracts.
Stride-1 convolutions (the common case) take a fast path that copies or
accumulates contiguous row segments; padding is handled inline without
padded temporaries.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()


def conv_out_hw(Py_ssize_t h, Py_ssize_t w, Py_ssize_t kh, Py_ssize_t kw,
                Py_ssize_t stride, Py_ssize_t pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


cdef inline Py_ssize_t _max(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t _min(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


def im2col(object x_in, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    """(N,C,H,W) float32 -> (N, C*kh*kw, OH*OW) patch matrix, rows in (c, ki, kj) order."""
    cdef cnp.ndarray[cnp.float32_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef cnp.ndarray[cnp.float32_t, ndim=3] cols = np.empty(
        (n, c * kh * kw, oh * ow), dtype=np.float32)
    cdef cnp.float32_t *xp = <cnp.float32_t *> x.data
    cdef cnp.float32_t *cp = <cnp.float32_t *> cols.data
    cdef Py_ssize_t b, ci, ki, kj, i, j, hi, wj, j0, j1
    cdef cnp.float32_t *src
    cdef cnp.float32_t *dst
    with nogil:
        for b in range(n):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        dst = cp + ((b * c * kh * kw) + (ci * kh + ki) * kw + kj) * oh * ow
                        for i in range(oh):
                            hi = i * stride + ki - pad
                            if hi < 0 or hi >= h:
                                memset(dst + i * ow, 0, ow * sizeof(cnp.float32_t))
                                continue
                            src = xp + ((b * c + ci) * h + hi) * w
                            if stride == 1:
                                # contiguous run of valid columns: wj = j + kj - pad in [0, w)
                                j0 = _max(0, pad - kj)
                                j1 = _min(ow, w + pad - kj)
                                if j0 > 0:
                                    memset(dst + i * ow, 0, j0 * sizeof(cnp.float32_t))
                                if j1 > j0:
                                    memcpy(dst + i * ow + j0, src + j0 + kj - pad,
                                           (j1 - j0) * sizeof(cnp.float32_t))
                                if j1 < ow:
                                    memset(dst + i * ow + j1, 0,
                                           (ow - j1) * sizeof(cnp.float32_t))
                            else:
                                for j in range(ow):
                                    wj = j * stride + kj - pad
                                    dst[i * ow + j] = src[wj] if 0 <= wj < w else 0.0
    return cols


def col2im(object dcols_in, tuple x_shape, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t pad):
    """Adjoint of im2col: scatter-add patch gradients back onto the image."""
    cdef cnp.ndarray[cnp.float32_t, ndim=3] dcols = np.ascontiguousarray(
        dcols_in, dtype=np.float32)
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef cnp.ndarray[cnp.float32_t, ndim=4] dx = np.zeros((n, c, h, w), dtype=np.float32)
    cdef cnp.float32_t *dp = <cnp.float32_t *> dx.data
    cdef cnp.float32_t *cp = <cnp.float32_t *> dcols.data
    cdef Py_ssize_t b, ci, ki, kj, i, j, hi, wj, j0, j1, base
    cdef cnp.float32_t *row
    cdef cnp.float32_t *dst
    with nogil:
        for b in range(n):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = cp + ((b * c * kh * kw) + (ci * kh + ki) * kw + kj) * oh * ow
                        for i in range(oh):
                            hi = i * stride + ki - pad
                            if hi < 0 or hi >= h:
                                continue
                            dst = dp + ((b * c + ci) * h + hi) * w
                            if stride == 1:
                                j0 = _max(0, pad - kj)
                                j1 = _min(ow, w + pad - kj)
                                base = kj - pad
                                for j in range(j0, j1):
                                    dst[base + j] += row[i * ow + j]
                            else:
                                for j in range(ow):
                                    wj = j * stride + kj - pad
                                    if 0 <= wj < w:
                                        dst[wj] += row[i * ow + j]
    return dx


def maxpool2d_forward(object x_in, Py_ssize_t k):
    """Non-overlapping k-by-k max pooling; ties go to the lowest window index."""
    cdef cnp.ndarray[cnp.float32_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // k, ow = w // k
    cdef cnp.ndarray[cnp.float32_t, ndim=4] y = np.empty((n, c, oh, ow), dtype=np.float32)
    cdef cnp.ndarray[cnp.int32_t, ndim=4] idx = np.empty((n, c, oh, ow), dtype=np.int32)
    cdef cnp.float32_t *xp = <cnp.float32_t *> x.data
    cdef cnp.float32_t *yp = <cnp.float32_t *> y.data
    cdef cnp.int32_t *ip = <cnp.int32_t *> idx.data
    cdef Py_ssize_t plane, i, j, di, dj, o
    cdef cnp.float32_t best, v, a, bval, cval, d
    cdef cnp.int32_t arg
    cdef cnp.float32_t *r0
    cdef cnp.float32_t *r1
    with nogil:
        for plane in range(n * c):
            for i in range(oh):
                if k == 2:
                    r0 = xp + (plane * h + 2 * i) * w
                    r1 = r0 + w
                    o = (plane * oh + i) * ow
                    for j in range(ow):
                        a = r0[2 * j]; bval = r0[2 * j + 1]
                        cval = r1[2 * j]; d = r1[2 * j + 1]
                        best = a; arg = 0
                        if bval > best: best = bval; arg = 1
                        if cval > best: best = cval; arg = 2
                        if d > best: best = d; arg = 3
                        yp[o + j] = best
                        ip[o + j] = arg
                else:
                    for j in range(ow):
                        best = xp[(plane * h + i * k) * w + j * k]
                        arg = 0
                        for di in range(k):
                            r0 = xp + (plane * h + i * k + di) * w + j * k
                            for dj in range(k):
                                v = r0[dj]
                                if v > best:
                                    best = v
                                    arg = <cnp.int32_t>(di * k + dj)
                        yp[(plane * oh + i) * ow + j] = best
                        ip[(plane * oh + i) * ow + j] = arg
    return y, idx


def maxpool2d_backward(object g_in, object idx_in, Py_ssize_t k, tuple x_shape):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] g = np.ascontiguousarray(g_in, dtype=np.float32)
    cdef cnp.ndarray[cnp.int32_t, ndim=4] idx = np.ascontiguousarray(idx_in, dtype=np.int32)
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = h // k, ow = w // k
    cdef cnp.ndarray[cnp.float32_t, ndim=4] dx = np.zeros((n, c, h, w), dtype=np.float32)
    cdef cnp.float32_t *dp = <cnp.float32_t *> dx.data
    cdef cnp.float32_t *gp = <cnp.float32_t *> g.data
    cdef cnp.int32_t *ip = <cnp.int32_t *> idx.data
    cdef Py_ssize_t plane, i, j, o, a
    with nogil:
        for plane in range(n * c):
            for i in range(oh):
                o = (plane * oh + i) * ow
                for j in range(ow):
                    a = ip[o + j]
                    dp[(plane * h + i * k + a // k) * w + j * k + a % k] = gp[o + j]
    return dx
