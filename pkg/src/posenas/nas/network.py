"""Stacked-cell convolutional network over a keyed parameter store.

The same forward code drives the weight-sharing supernet (a store holding a
parameter for every possible path) and a standalone final network (a store
holding only the paths of one genotype). Keys look like
``L{layer}.{cell}.n{node}.{slot}.{op}``; a forward pass reads only the keys on
the chosen paths.

Layout: 3x3 stem conv + BN, then cells. Each cell calibrates its two inputs
to its channel count (and resolution, after a reduction), evaluates its
nodes, and mixes the nodes no later node consumes with a per-node 1x1 conv
followed by BN. Reduction cells double the channels and apply stride 2 to
ops reading the cell inputs.
"""
from dataclasses import dataclass, field

import numpy as np

from .. import autograd as ag
from ..errors import NumericError
from .genotype import CELL_TYPES, output_nodes

BN_MOMENTUM = 0.9


def macro_layout(cells_per_stage):
    """[normal x n, reduction] x 2, normal x n."""
    return (["normal"] * cells_per_stage + ["reduction"]) * 2 + ["normal"] * cells_per_stage


@dataclass
class ParamStore:
    """Arrays keyed by path name plus BN running statistics."""

    space: object
    layout: list
    num_classes: int
    in_channels: int = 3
    params: dict = field(default_factory=dict)
    bn: dict = field(default_factory=dict)

    def num_params(self):
        return int(sum(v.size for v in self.params.values()))


def _op_kernel(op):
    return int(op[-1]) if op.startswith("sep_conv") else 0


def _plan(space, layout, in_channels):
    """Channel/stride bookkeeping per layer: (cell type, c_out, calib0, calib1).

    calib entries are (mode, c_in) with mode in {"none", "conv", "reduce"}.
    """
    c = space.stem_channels
    # (channels, resolution level) of s0 and s1
    s0 = s1 = (c, 0)
    plan = []
    for ct in layout:
        c_out = s1[0] * 2 if ct == "reduction" else s1[0]
        calib = []
        for ch, lvl in (s0, s1):
            if lvl < s1[1]:
                calib.append(("reduce", ch))
            elif ch != c_out:
                calib.append(("conv", ch))
            else:
                calib.append(("none", ch))
        plan.append((ct, c_out, tuple(calib)))
        out = (c_out, s1[1] + (1 if ct == "reduction" else 0))
        s0, s1 = s1, out
    return plan, s1[0]


def _needs_reduce(ct, inp):
    return ct == "reduction" and inp < 2


def param_shapes(space, layout, num_classes, in_channels=3, genotype=None):
    """Ordered {key: shape} for all paths, or only ``genotype``'s paths."""
    shapes = {}
    c0 = space.stem_channels
    shapes["stem.W"] = (c0, in_channels, 3, 3)
    shapes["stem.bn.gamma"] = (c0,)
    shapes["stem.bn.beta"] = (c0,)
    plan, c_final = _plan(space, layout, in_channels)

    def bn(prefix, ch):
        shapes[prefix + ".bn.gamma"] = (ch,)
        shapes[prefix + ".bn.beta"] = (ch,)

    def op_params(prefix, op, c, reduce):
        if op.startswith("sep_conv"):
            k = _op_kernel(op)
            shapes[prefix + ".dw"] = (c, k, k)
            shapes[prefix + ".pw"] = (c, c)
            bn(prefix, c)
        elif op == "identity" and reduce:
            shapes[prefix + ".pw"] = (c, c)
            bn(prefix, c)

    for layer, (ct, c_out, calib) in enumerate(plan):
        pre = f"L{layer}.{ct}"
        for i, (mode, c_in) in enumerate(calib):
            if mode != "none":
                shapes[f"{pre}.pre{i}.pw"] = (c_out, c_in)
                bn(f"{pre}.pre{i}", c_out)
        nodes = genotype.cell(ct) if genotype is not None else None
        for k in range(space.nodes_per_cell):
            for slot in ("a", "b"):
                if nodes is None:
                    for op in space.ops:
                        # in the supernet a slot may read a cell input, so reduction
                        # cells keep the stride-2 identity parameters for every node
                        op_params(f"{pre}.n{k}.{slot}.{op}", op, c_out, ct == "reduction")
                else:
                    node = nodes[k]
                    inp, op = (node.input_a, node.op_a) if slot == "a" else (node.input_b, node.op_b)
                    opname = space.ops[op]
                    op_params(f"{pre}.n{k}.{slot}.{opname}", opname, c_out, _needs_reduce(ct, inp))
        outs = range(space.nodes_per_cell) if nodes is None else output_nodes(nodes)
        for k in outs:
            shapes[f"{pre}.combine.n{k}"] = (c_out, c_out)
        bn(f"{pre}.combine", c_out)
    shapes["head.W"] = (c_final, num_classes)
    shapes["head.b"] = (num_classes,)
    return shapes


def _fan_in(key, shape):
    if key.endswith(".dw"):
        return shape[1] * shape[2]
    if key == "head.W":
        return shape[0]
    return int(np.prod(shape[1:]))


def init_store(space, layout, num_classes, seed, in_channels=3, genotype=None):
    """He-normal conv/linear weights, zero biases, BN scale 1 and shift 0."""
    rng = np.random.default_rng(seed)
    store = ParamStore(space, list(layout), num_classes, in_channels)
    for key, shape in param_shapes(space, layout, num_classes, in_channels, genotype).items():
        if key.endswith(".gamma"):
            store.params[key] = np.ones(shape)
            bn_key = key[:-len(".gamma")]
            store.bn[bn_key] = {"mean": np.zeros(shape), "var": np.ones(shape)}
        elif key.endswith(".beta") or key == "head.b":
            store.params[key] = np.zeros(shape)
        else:
            store.params[key] = rng.normal(0.0, np.sqrt(2.0 / _fan_in(key, shape)), shape)
    return store


class _Ctx:
    def __init__(self, store, train, update_stats):
        self.store = store
        self.train = train
        self.update_stats = update_stats
        self.leaves = {}

    def p(self, key):
        if key not in self.leaves:
            try:
                self.leaves[key] = ag.param(self.store.params[key], key)
            except KeyError:
                raise KeyError(f"parameter {key!r} not in the store (genotype/store mismatch)") from None
        return self.leaves[key]

    def bn(self, x, prefix):
        return ag.batch_norm(x, self.p(prefix + ".bn.gamma"), self.p(prefix + ".bn.beta"),
                             self.store.bn[prefix + ".bn"], train=self.train, momentum=BN_MOMENTUM,
                             update_stats=self.update_stats)


def apply_op(ctx, x, opname, prefix, stride):
    if opname == "identity":
        if stride == 1:
            return x
        h = ag.subsample(ag.relu(x), stride)
        return ctx.bn(ag.pointwise_conv(h, ctx.p(prefix + ".pw")), prefix)
    if opname.startswith("sep_conv"):
        h = ag.depthwise_conv(ag.relu(x), ctx.p(prefix + ".dw"), stride)
        return ctx.bn(ag.pointwise_conv(h, ctx.p(prefix + ".pw")), prefix)
    if opname == "avg_pool_3x3":
        return ag.avg_pool(x, 3, stride)
    if opname == "max_pool_3x3":
        return ag.max_pool(x, 3, stride)
    raise ValueError(f"unknown op {opname!r}")


def cell_nodes(ctx, layer, ct, c_out, calib, s0, s1, nodes):
    """Calibrated inputs plus every node output of one cell (list of tensors)."""
    pre = f"L{layer}.{ct}"
    states = []
    for i, ((mode, _), x) in enumerate(zip(calib, (s0, s1))):
        if mode == "reduce":
            h = ag.subsample(ag.relu(x), 2)
            x = ctx.bn(ag.pointwise_conv(h, ctx.p(f"{pre}.pre{i}.pw")), f"{pre}.pre{i}")
        elif mode == "conv":
            x = ctx.bn(ag.pointwise_conv(ag.relu(x), ctx.p(f"{pre}.pre{i}.pw")), f"{pre}.pre{i}")
        states.append(x)
    space = ctx.store.space
    for k, node in enumerate(nodes):
        parts = []
        for slot, inp, op in (("a", node.input_a, node.op_a), ("b", node.input_b, node.op_b)):
            stride = 2 if _needs_reduce(ct, inp) else 1
            opname = space.ops[op]
            parts.append(apply_op(ctx, states[inp], opname, f"{pre}.n{k}.{slot}.{opname}", stride))
        states.append(ag.add(parts[0], parts[1]))
    return states


def cell_concat(states, nodes):
    """Concatenation (channel axis) of the node outputs nothing else consumes."""
    return ag.concat([states[2 + k] for k in output_nodes(nodes)], axis=1)


def _combine(ctx, layer, ct, states, nodes):
    pre = f"L{layer}.{ct}"
    mixed = [ag.pointwise_conv(ag.relu(states[2 + k]), ctx.p(f"{pre}.combine.n{k}"))
             for k in output_nodes(nodes)]
    return ctx.bn(ag.add_n(mixed), f"{pre}.combine")


def _check_images(store, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != store.in_channels:
        raise ValueError(f"expected N x {store.in_channels} x H x W images, got {x.shape}")
    n_red = store.layout.count("reduction")
    if x.shape[2] % (2 ** n_red) or x.shape[3] % (2 ** n_red):
        raise ValueError(f"image size {x.shape[2:]} not divisible through {n_red} reductions")
    return x


def forward_graph(store, genotype, x, train=True, update_stats=False):
    """Logits tensor and the dict of parameter leaves it read."""
    x = _check_images(store, x)
    ctx = _Ctx(store, train, update_stats)
    stem = ctx.bn(ag.conv2d(ag.const(x), ctx.p("stem.W")), "stem")
    s0 = s1 = stem
    plan, _ = _plan(store.space, store.layout, store.in_channels)
    for layer, (ct, c_out, calib) in enumerate(plan):
        nodes = genotype.cell(ct)
        states = cell_nodes(ctx, layer, ct, c_out, calib, s0, s1, nodes)
        s0, s1 = s1, _combine(ctx, layer, ct, states, nodes)
    pooled = ag.global_avg_pool(s1)
    logits = ag.linear(pooled, ctx.p("head.W"), ctx.p("head.b"))
    return logits, ctx.leaves


def forward(store, genotype, x, mode="eval", update_stats=False):
    """Class logits. ``mode="train"`` normalizes with batch statistics."""
    logits, _ = forward_graph(store, genotype, x, mode == "train", update_stats)
    return logits.value


def loss_and_grads(store, genotype, x, labels, train=True, update_stats=False):
    """Cross-entropy loss and gradients for every store key (zeros off-path)."""
    logits, leaves = forward_graph(store, genotype, x, train, update_stats)
    loss = ag.softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss.value):
        raise NumericError("non-finite cross-entropy loss")
    ag.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}
    return float(loss.value), grads, leaves


def images_to_array(images):
    """List of SPMFImage (H x W x 3) to N x 3 x H x W."""
    return np.stack([im.pixels for im in images]).transpose(0, 3, 1, 2).copy()


def labels_of(images):
    return np.array([im.label for im in images], dtype=np.int64)


__all__ = ["CELL_TYPES", "ParamStore", "macro_layout", "param_shapes", "init_store", "forward",
           "forward_graph", "loss_and_grads", "cell_nodes", "cell_concat", "images_to_array"]
