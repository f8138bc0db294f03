"""Minimal reverse-mode differentiation over numpy arrays.

Every op builds a ``Tensor`` holding its value and a closure that maps the
output gradient to parent gradients. ``backward`` walks the graph in reverse
topological order. Only the ops the networks in this package need are here.
"""
import numpy as np

from . import kernels

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"


def param(value, name=None):
    return Tensor(value, requires_grad=True, name=name)


def const(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(value, parents, fn):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, parents, fn)


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.value) if grad is None else np.asarray(grad, float)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    a, b = const(a), const(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = const(a), const(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = const(a), const(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a, s):
    return _node(a.value * s, (a,), lambda g: (g * s,))


def add_n(xs):
    out = xs[0]
    for x in xs[1:]:
        out = add(out, x)
    return out


def matmul(a, b):
    a, b = const(a), const(b)
    return _node(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def linear(x, w, b):
    """``x @ w + b`` with ``w`` shaped (in, out)."""
    return add(matmul(x, w), b)


def relu(x):
    mask = x.value > 0
    return _node(x.value * mask, (x,), lambda g: (g * mask,))


def selu(x):
    v = x.value
    neg = SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(v, 0.0))
    out = np.where(v > 0, SELU_SCALE * v, neg)
    deriv = np.where(v > 0, SELU_SCALE, neg + SELU_SCALE * SELU_ALPHA)
    return _node(out, (x,), lambda g: (g * deriv,))


def tanh(x):
    out = np.tanh(x.value)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def dropout(x, rate, rng):
    """Inverted dropout; ``rate`` is the drop probability."""
    if rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.value * mask, (x,), lambda g: (g * mask,))


def batch_norm(x, gamma, beta, state=None, train=True, momentum=0.9, eps=1e-5,
               update_stats=True):
    """Batch norm over all axes but the channel axis (axis 1).

    ``state`` holds ``mean``/``var`` running estimates; in train mode batch
    statistics are used and (if ``update_stats``) folded into ``state`` as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    v = x.value
    axes = (0,) if v.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if v.ndim == 2 else (1, -1, 1, 1)
    if train:
        mu = v.mean(axis=axes)
        var = v.var(axis=axes)
        if state is not None and update_stats:
            state["mean"] = momentum * state["mean"] + (1.0 - momentum) * mu
            state["var"] = momentum * state["var"] + (1.0 - momentum) * var
    else:
        mu, var = state["mean"], state["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu.reshape(bshape)) * inv.reshape(bshape)
    gv = gamma.value.reshape(bshape)
    out = xhat * gv + beta.value.reshape(bshape)
    m = v.size // v.shape[1]

    def fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gv
        if train:
            dx = (inv.reshape(bshape) / m) * (
                m * dxhat - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), fn)


def huber(pred, target, delta):
    """Mean Huber penalty of ``pred - target`` over all elements."""
    e = pred.value - const(target).value
    a = np.abs(e)
    quad = a <= delta
    val = np.where(quad, 0.5 * e * e, delta * (a - 0.5 * delta)).mean()
    d = np.where(quad, e, delta * np.sign(e)) / e.size
    return _node(val, (pred,), lambda g: (g * d,))


def log_softmax(logits):
    z = logits.value - logits.value.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _node(out, (logits,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    val = -logp[np.arange(n), labels].mean()
    dlog = np.exp(logp)
    dlog[np.arange(n), labels] -= 1.0
    dlog /= n
    return _node(val, (logits,), lambda g: (g * dlog,))


def pick(x, index):
    """Select ``x[..., index]`` from the last axis."""
    out = x.value[..., index]

    def fn(g):
        gx = np.zeros_like(x.value)
        gx[..., index] = g
        return (gx,)

    return _node(out, (x,), fn)


def take_rows(x, rows):
    rows = np.asarray(rows)

    def fn(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, rows, g)
        return (gx,)

    return _node(x.value[rows], (x,), fn)


def sum_all(x):
    return _node(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reshape(x, shape):
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(xs, axis=1):
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(xs)))

    return _node(np.concatenate([x.value for x in xs], axis=axis), xs, fn)


# ---- image ops (NCHW) ------------------------------------------------------

def depthwise_conv(x, w, stride=1):
    out = kernels.depthwise_conv_forward(x.value, w.value, stride)
    return _node(out, (x, w), lambda g: kernels.depthwise_conv_backward(x.value, w.value, stride, g))


def pointwise_conv(x, w):
    """1x1 convolution, ``w`` shaped (C_out, C_in)."""
    out = np.einsum("oc,nchw->nohw", w.value, x.value, optimize=True)
    return _node(out, (x, w), lambda g: (np.einsum("oc,nohw->nchw", w.value, g, optimize=True),
                                         np.einsum("nohw,nchw->oc", g, x.value, optimize=True)))


def conv2d(x, w):
    """Dense stride-1 same-padded convolution, ``w`` shaped (C_out, C_in, k, k)."""
    k = w.shape[2]
    p = k // 2
    n, c, h, wd = x.shape
    xp = np.pad(x.value, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.stack([xp[:, :, dy:dy + h, dx:dx + wd] for dy in range(k) for dx in range(k)], axis=2)
    wf = w.value.reshape(w.shape[0], c, k * k)
    out = np.einsum("ock,nckhw->nohw", wf, cols, optimize=True)

    def fn(g):
        gw = np.einsum("nohw,nckhw->ock", g, cols, optimize=True).reshape(w.shape)
        gcols = np.einsum("ock,nohw->nckhw", wf, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i, (dy, dx) in enumerate((dy, dx) for dy in range(k) for dx in range(k)):
            gxp[:, :, dy:dy + h, dx:dx + wd] += gcols[:, :, i]
        return gxp[:, :, p:p + h, p:p + wd], gw

    return _node(out, (x, w), fn)


def max_pool(x, k=3, stride=1):
    out, arg = kernels.max_pool_forward(x.value, k, stride)
    return _node(out, (x,), lambda g: (kernels.max_pool_backward(x.shape, k, stride, arg, g),))


def avg_pool(x, k=3, stride=1):
    out = kernels.avg_pool_forward(x.value, k, stride)
    return _node(out, (x,), lambda g: (kernels.avg_pool_backward(x.shape, k, stride, g),))


def subsample(x, stride=2):
    out = x.value[:, :, ::stride, ::stride]

    def fn(g):
        gx = np.zeros_like(x.value)
        gx[:, :, ::stride, ::stride] = g
        return (gx,)

    return _node(out, (x,), fn)


def global_avg_pool(x):
    n, c, h, w = x.shape
    return _node(x.value.mean(axis=(2, 3)), (x,),
                 lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),))
