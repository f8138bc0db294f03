# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels (float64, NCHW).

Semantics match ``_pykernels`` exactly, including argmax tie-breaking
(first maximum in row-major window order wins).
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _out(Py_ssize_t n, Py_ssize_t k, Py_ssize_t s) nogil:
    return (n + 2 * (k // 2) - k) // s + 1


def depthwise_conv_forward(double[:, :, :, ::1] x, double[:, :, ::1] w, Py_ssize_t stride):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t k = w.shape[1], p = k // 2
    cdef Py_ssize_t Ho = _out(H, k, stride), Wo = _out(W, k, stride)
    out_arr = np.zeros((N, C, Ho, Wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, i, j, dy, dx, yi, xi
    cdef double acc
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = 0.0
                        for dy in range(k):
                            yi = i * stride + dy - p
                            if yi < 0 or yi >= H:
                                continue
                            for dx in range(k):
                                xi = j * stride + dx - p
                                if xi < 0 or xi >= W:
                                    continue
                                acc = acc + w[c, dy, dx] * x[n, c, yi, xi]
                        out[n, c, i, j] = acc
    return out_arr


def depthwise_conv_backward(double[:, :, :, ::1] x, double[:, :, ::1] w, Py_ssize_t stride,
                            double[:, :, :, ::1] gout):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t k = w.shape[1], p = k // 2
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    gx_arr = np.zeros((N, C, H, W))
    gw_arr = np.zeros((C, k, k))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, c, i, j, dy, dx, yi, xi
    cdef double g
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        g = gout[n, c, i, j]
                        for dy in range(k):
                            yi = i * stride + dy - p
                            if yi < 0 or yi >= H:
                                continue
                            for dx in range(k):
                                xi = j * stride + dx - p
                                if xi < 0 or xi >= W:
                                    continue
                                gw[c, dy, dx] += g * x[n, c, yi, xi]
                                gx[n, c, yi, xi] += g * w[c, dy, dx]
    return gx_arr, gw_arr


def max_pool_forward(double[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t Ho = _out(H, k, stride), Wo = _out(W, k, stride)
    out_arr = np.empty((N, C, Ho, Wo))
    arg_arr = np.empty((N, C, Ho, Wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, i, j, dy, dx, yi, xi, best_idx
    cdef double best, v
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        best = -1.0 / 0.0
                        best_idx = 0
                        for dy in range(k):
                            yi = i * stride + dy - p
                            for dx in range(k):
                                xi = j * stride + dx - p
                                if yi < 0 or yi >= H or xi < 0 or xi >= W:
                                    continue
                                v = x[n, c, yi, xi]
                                if v > best:
                                    best = v
                                    best_idx = dy * k + dx
                        out[n, c, i, j] = best
                        arg[n, c, i, j] = best_idx
    return out_arr, arg_arr


def max_pool_backward(tuple x_shape, Py_ssize_t k, Py_ssize_t stride,
                      cnp.int64_t[:, :, :, ::1] arg, double[:, :, :, ::1] gout):
    cdef Py_ssize_t N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    gx_arr = np.zeros((N, C, H, W))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, i, j, a
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        a = arg[n, c, i, j]
                        gx[n, c, i * stride + a // k - p, j * stride + a % k - p] += gout[n, c, i, j]
    return gx_arr


cdef inline double _count(Py_ssize_t i, Py_ssize_t j, Py_ssize_t H, Py_ssize_t W,
                          Py_ssize_t k, Py_ssize_t stride) nogil:
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t y0 = i * stride - p, x0 = j * stride - p
    cdef Py_ssize_t y1 = y0 + k, x1 = x0 + k
    if y0 < 0:
        y0 = 0
    if x0 < 0:
        x0 = 0
    if y1 > H:
        y1 = H
    if x1 > W:
        x1 = W
    return <double>((y1 - y0) * (x1 - x0))


def avg_pool_forward(double[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t Ho = _out(H, k, stride), Wo = _out(W, k, stride)
    out_arr = np.empty((N, C, Ho, Wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, i, j, dy, dx, yi, xi
    cdef double acc
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = 0.0
                        for dy in range(k):
                            yi = i * stride + dy - p
                            if yi < 0 or yi >= H:
                                continue
                            for dx in range(k):
                                xi = j * stride + dx - p
                                if xi < 0 or xi >= W:
                                    continue
                                acc = acc + x[n, c, yi, xi]
                        out[n, c, i, j] = acc / _count(i, j, H, W, k, stride)
    return out_arr


def avg_pool_backward(tuple x_shape, Py_ssize_t k, Py_ssize_t stride, double[:, :, :, ::1] gout):
    cdef Py_ssize_t N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    gx_arr = np.zeros((N, C, H, W))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, i, j, dy, dx, yi, xi
    cdef double g
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        g = gout[n, c, i, j] / _count(i, j, H, W, k, stride)
                        for dy in range(k):
                            yi = i * stride + dy - p
                            if yi < 0 or yi >= H:
                                continue
                            for dx in range(k):
                                xi = j * stride + dx - p
                                if xi < 0 or xi >= W:
                                    continue
                                gx[n, c, yi, xi] += g
    return gx_arr
