"""Pure numpy reference kernels for the convolution and pooling hot loops.

All arrays are float64, NCHW. Padding is "same" style: ``pad = k // 2`` and
``out = (H + 2*pad - k) // stride + 1``.
"""
import numpy as np


def out_size(n, k, stride):
    return (n + 2 * (k // 2) - k) // stride + 1


def _windows(xp, k, stride, ho, wo):
    for dy in range(k):
        for dx in range(k):
            yield dy, dx, xp[:, :, dy:dy + stride * (ho - 1) + 1:stride,
                             dx:dx + stride * (wo - 1) + 1:stride]


def depthwise_conv_forward(x, w, stride):
    """Per-channel ``k x k`` cross-correlation. ``w`` has shape (C, k, k)."""
    n, c, h, wd = x.shape
    k = w.shape[1]
    p = k // 2
    ho, wo = out_size(h, k, stride), out_size(wd, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, c, ho, wo))
    for dy, dx, view in _windows(xp, k, stride, ho, wo):
        out += w[None, :, dy, dx, None, None] * view
    return out


def depthwise_conv_backward(x, w, stride, gout):
    n, c, h, wd = x.shape
    k = w.shape[1]
    p = k // 2
    ho, wo = gout.shape[2], gout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for dy, dx, view in _windows(xp, k, stride, ho, wo):
        gw[:, dy, dx] = np.einsum("nchw,nchw->c", gout, view)
        gxp[:, :, dy:dy + stride * (ho - 1) + 1:stride,
            dx:dx + stride * (wo - 1) + 1:stride] += w[None, :, dy, dx, None, None] * gout
    return gxp[:, :, p:p + h, p:p + wd], gw


def max_pool_forward(x, k, stride):
    """Returns pooled values and the flat window offset of each argmax."""
    n, c, h, wd = x.shape
    p = k // 2
    ho, wo = out_size(h, k, stride), out_size(wd, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    stack = np.stack([v for _, _, v in _windows(xp, k, stride, ho, wo)])
    arg = np.argmax(stack, axis=0)
    out = np.take_along_axis(stack, arg[None], axis=0)[0]
    return out, arg.astype(np.int64)


def max_pool_backward(x_shape, k, stride, arg, gout):
    n, c, h, wd = x_shape
    p = k // 2
    ho, wo = gout.shape[2], gout.shape[3]
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for dy in range(k):
        for dx in range(k):
            sel = np.where(arg == dy * k + dx, gout, 0.0)
            gxp[:, :, dy:dy + stride * (ho - 1) + 1:stride,
                dx:dx + stride * (wo - 1) + 1:stride] += sel
    return gxp[:, :, p:p + h, p:p + wd]


def _pool_counts(h, wd, k, stride):
    p = k // 2
    ho, wo = out_size(h, k, stride), out_size(wd, k, stride)
    ones = np.pad(np.ones((1, 1, h, wd)), ((0, 0), (0, 0), (p, p), (p, p)))
    cnt = np.zeros((1, 1, ho, wo))
    for _, _, v in _windows(ones, k, stride, ho, wo):
        cnt += v
    return cnt


def avg_pool_forward(x, k, stride):
    """Average over in-bounds window positions (padding excluded from the count)."""
    n, c, h, wd = x.shape
    p = k // 2
    ho, wo = out_size(h, k, stride), out_size(wd, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, c, ho, wo))
    for _, _, v in _windows(xp, k, stride, ho, wo):
        out += v
    return out / _pool_counts(h, wd, k, stride)


def avg_pool_backward(x_shape, k, stride, gout):
    n, c, h, wd = x_shape
    p = k // 2
    ho, wo = gout.shape[2], gout.shape[3]
    g = gout / _pool_counts(h, wd, k, stride)
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for dy in range(k):
        for dx in range(k):
            gxp[:, :, dy:dy + stride * (ho - 1) + 1:stride,
                dx:dx + stride * (wo - 1) + 1:stride] += g
    return gxp[:, :, p:p + h, p:p + wd]
