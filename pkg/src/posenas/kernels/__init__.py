"""Convolution/pooling kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; otherwise the numpy
implementation is selected. ``set_backend`` switches explicitly, which the
tests and the benchmark use to compare both.
"""
import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = (
    "depthwise_conv_forward",
    "depthwise_conv_backward",
    "max_pool_forward",
    "max_pool_backward",
    "avg_pool_forward",
    "avg_pool_backward",
)

_active = None


def available_backends():
    return ["python"] + (["cython"] if _ckernels is not None else [])


def backend():
    return "cython" if _active is _ckernels and _ckernels is not None else "python"


def set_backend(name):
    global _active
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _ckernels
    elif name == "python":
        _active = _pykernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


set_backend("cython" if _ckernels is not None else "python")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def depthwise_conv_forward(x, w, stride):
    return _active.depthwise_conv_forward(_c(x), _c(w), int(stride))


def depthwise_conv_backward(x, w, stride, gout):
    return _active.depthwise_conv_backward(_c(x), _c(w), int(stride), _c(gout))


def max_pool_forward(x, k, stride):
    return _active.max_pool_forward(_c(x), int(k), int(stride))


def max_pool_backward(x_shape, k, stride, arg, gout):
    return _active.max_pool_backward(tuple(x_shape), int(k), int(stride),
                                     np.ascontiguousarray(arg, dtype=np.int64), _c(gout))


def avg_pool_forward(x, k, stride):
    return _active.avg_pool_forward(_c(x), int(k), int(stride))


def avg_pool_backward(x_shape, k, stride, gout):
    return _active.avg_pool_backward(tuple(x_shape), int(k), int(stride), _c(gout))


out_size = _pykernels.out_size
