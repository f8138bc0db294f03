"""Two-stream residual network lifting 2D keypoints to root-centered 3D joints.

Each stream is input-linear -> residual blocks -> output-linear, where a block
is two rounds of linear -> BN -> SELU -> dropout with an identity skip around
both. The stream outputs are averaged. One stream sees ground-truth 2D during
training, the other detector 2D.
"""
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .data_model import NormStats, Pose3D, PoseSequence, destandardize, root_center_array, standardize
from .errors import NumericError, SchemaError, TestLeakError
from .optim import OptimizerState, adam_step, lr_schedule

log = logging.getLogger(__name__)

STREAMS = ("gt", "det")
BN_MOMENTUM = 0.9
CHECKPOINT_FORMAT = "posenas-lifter"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LifterArchitecture:
    input_dim: int
    output_dim: int
    hidden_width: int = 1024
    num_blocks: int = 2
    dropout_rate: float = 0.25

    def __post_init__(self):
        if self.hidden_width < 1 or self.num_blocks < 1:
            raise ValueError("hidden_width and num_blocks must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class LifterParams:
    arch: LifterArchitecture
    weights: dict
    bn: dict
    stats: dict = field(default_factory=dict)  # "in_gt", "in_det", "out" -> NormStats


def _layer_names(arch, stream):
    names = [(f"{stream}.in", arch.input_dim, arch.hidden_width)]
    for b in range(arch.num_blocks):
        for i in (1, 2):
            names.append((f"{stream}.b{b}.l{i}", arch.hidden_width, arch.hidden_width))
    names.append((f"{stream}.out", arch.hidden_width, arch.output_dim))
    return names


def init_lifter(arch, seed):
    """He-normal weights, zero biases, unit BN scale and zero shift."""
    rng = np.random.default_rng(seed)
    weights, bn = {}, {}
    for stream in STREAMS:
        for name, fan_in, fan_out in _layer_names(arch, stream):
            weights[name + ".W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
            weights[name + ".b"] = np.zeros(fan_out)
        for b in range(arch.num_blocks):
            for i in (1, 2):
                key = f"{stream}.b{b}.bn{i}"
                weights[key + ".gamma"] = np.ones(arch.hidden_width)
                weights[key + ".beta"] = np.zeros(arch.hidden_width)
                bn[key] = {"mean": np.zeros(arch.hidden_width), "var": np.ones(arch.hidden_width)}
    return LifterParams(arch, weights, bn)


def _stream_rng(seed, stream):
    return np.random.default_rng([seed, STREAMS.index(stream)])


def _stream_graph(params, stream, x, train, rng, leaves, update_stats):
    arch = params.arch

    def p(name):
        if name not in leaves:
            leaves[name] = ag.param(params.weights[name], name)
        return leaves[name]

    h = ag.linear(ag.const(x), p(f"{stream}.in.W"), p(f"{stream}.in.b"))
    for b in range(arch.num_blocks):
        skip = h
        for i in (1, 2):
            pre = f"{stream}.b{b}"
            h = ag.linear(h, p(f"{pre}.l{i}.W"), p(f"{pre}.l{i}.b"))
            h = ag.batch_norm(h, p(f"{pre}.bn{i}.gamma"), p(f"{pre}.bn{i}.beta"),
                              params.bn[f"{pre}.bn{i}"], train=train, momentum=BN_MOMENTUM,
                              update_stats=update_stats)
            h = ag.selu(h)
            if train:
                h = ag.dropout(h, arch.dropout_rate, rng)
        h = ag.add(h, skip)
    return ag.linear(h, p(f"{stream}.out.W"), p(f"{stream}.out.b"))


def _check_input(params, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(f"input has {x.shape[1]} features, network expects {params.arch.input_dim}")
    return x


def stream_forward(params, stream, x, mode="eval", seed=0):
    """Output of one stream in standardized 3D space.

    ``mode="train"`` uses batch statistics and seeded dropout (running
    statistics are not modified); ``mode="eval"`` uses running statistics.
    """
    if stream not in STREAMS:
        raise ValueError(f"stream must be one of {STREAMS}")
    x = _check_input(params, x)
    out = _stream_graph(params, stream, x, mode == "train", _stream_rng(seed, stream), {}, False)
    return out.value


def two_stream_forward(params, x_gt, x_det, mode="eval", seed=0):
    x_gt, x_det = _check_input(params, x_gt), _check_input(params, x_det)
    if x_gt.shape[0] != x_det.shape[0]:
        raise ValueError("the two streams received different batch sizes")
    a = stream_forward(params, "gt", x_gt, mode, seed)
    b = stream_forward(params, "det", x_det, mode, seed)
    return 0.5 * (a + b)


def huber_loss(pred, target, delta=1.0):
    """Mean Huber penalty: 0.5 e^2 for |e| <= delta, delta (|e| - delta/2) beyond."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return float(ag.huber(ag.const(np.asarray(pred, dtype=np.float64)), target, delta).value)


def _loss_graph(params, x_gt, x_det, y, delta, seed, train_mode, objective, update_stats=False):
    leaves = {}
    train = train_mode == "train"
    a = _stream_graph(params, "gt", x_gt, train, _stream_rng(seed, "gt"), leaves, update_stats)
    b = _stream_graph(params, "det", x_det, train, _stream_rng(seed, "det"), leaves, update_stats)
    if objective == "joint":
        loss = ag.huber(ag.scale(ag.add(a, b), 0.5), y, delta)
    elif objective == "separate":
        loss = ag.add(ag.huber(a, y, delta), ag.huber(b, y, delta))
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return loss, leaves


def lifter_loss(params, x_gt, x_det, y, delta=1.0, seed=0, mode="train", objective="joint"):
    loss, _ = _loss_graph(params, x_gt, x_det, y, delta, seed, mode, objective)
    return float(loss.value)


def lifter_gradients(params, x_gt, x_det, y, delta=1.0, seed=0, mode="train", objective="joint",
                     update_stats=False):
    """Loss value and exact gradients w.r.t. every trainable array.

    ``objective="joint"`` supervises the averaged output; ``"separate"`` sums
    each stream's own loss, so each stream is trained against the target alone.
    """
    if len(y) == 0:
        raise ValueError("empty batch")
    loss, leaves = _loss_graph(params, np.asarray(x_gt, float), np.asarray(x_det, float),
                               np.asarray(y, float), delta, seed, mode, objective, update_stats)
    ag.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}
    return float(loss.value), grads


@dataclass
class LifterConfig:
    hidden_width: int = 1024
    num_blocks: int = 2
    dropout: float = 0.25
    epochs: int = 300
    batch_size: int = 128
    lr: float = 0.001
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    huber_delta: float = 1.0
    objective: str = "joint"
    seed: int = 0


def _ensure_train_only(tags):
    if any(t == "test" for t in tags):
        raise TestLeakError("test-split samples passed to lifter training")


def train_lifter(data, config, split_tags=None):
    """Seeded mini-batch Adam on the Huber objective.

    ``data`` is a ``LiftingSet``; returns ``(params, history)`` where
    history holds the mean train loss per epoch.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if split_tags is not None:
        _ensure_train_only(split_tags)
    cfg = config
    arch = LifterArchitecture(data.x_gt.shape[1], data.y.shape[1], cfg.hidden_width,
                              cfg.num_blocks, cfg.dropout)
    params = init_lifter(arch, cfg.seed)
    params.stats = {
        "in_gt": NormStats.fit(data.x_gt),
        "in_det": NormStats.fit(data.x_det),
        "out": NormStats.fit(data.y),
    }
    xg = standardize(data.x_gt, params.stats["in_gt"])
    xd = standardize(data.x_det, params.stats["in_det"])
    yy = standardize(data.y, params.stats["out"])
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState()
    history = []
    n = len(yy)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay, cfg.lr_decay_every)
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2:  # batch statistics need two samples
                continue
            loss, grads = lifter_gradients(params, xg[idx], xd[idx], yy[idx], cfg.huber_delta,
                                           int(rng.integers(2**31)), "train", cfg.objective,
                                           update_stats=True)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite lifter loss at epoch {epoch}")
            params.weights, opt = adam_step(params.weights, grads, opt, lr)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.debug("lifter epoch %d lr %.2e loss %.5f", epoch, lr, history[-1])
    return params, history


def predict_array(params, x2d):
    """Lift F x 2N detector keypoints to F x M x 3 root-centered millimetres.

    The single 2D source feeds both streams (each with its own input
    statistics) and the outputs are averaged.
    """
    x2d = np.asarray(x2d, dtype=np.float64)
    if x2d.shape[1] != params.arch.input_dim:
        raise SchemaError(f"input has {x2d.shape[1] // 2} joints, checkpoint expects "
                          f"{params.arch.input_dim // 2}")
    z = two_stream_forward(params, standardize(x2d, params.stats["in_gt"]),
                           standardize(x2d, params.stats["in_det"]), "eval")
    y = destandardize(z, params.stats["out"]).reshape(len(x2d), -1, 3)
    return y


def predict_3d(params, seq2d, root_index=0):
    if seq2d.is_3d:
        raise ValueError("predict_3d expects a 2D sequence")
    x = seq2d.data.reshape(seq2d.num_frames, -1)
    y = root_center_array(predict_array(params, x), root_index)
    return PoseSequence(y, seq2d.frame_rate, root_index)


def mpjpe(pred, gt):
    """Mean per-joint Euclidean distance over all frames and joints."""
    def arr(x):
        if isinstance(x, PoseSequence):
            return x.data
        if len(x) and isinstance(x[0], Pose3D):
            return np.stack([p.joints for p in x])
        return np.asarray(x, dtype=np.float64)

    a, b = arr(pred), arr(gt)
    if a.shape != b.shape:
        raise ValueError(f"prediction shape {a.shape} != ground truth shape {b.shape}")
    return float(np.linalg.norm(a - b, axis=-1).mean())


# ---- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params, config=None):
    """npz container: arrays under ``w/``, ``bn/``, ``stats/`` plus a JSON ``meta`` entry."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(params.arch),
        "config": asdict(config) if config is not None else None,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for k, v in params.weights.items():
        arrays[f"w/{k}"] = np.ascontiguousarray(v)
    for k, st in params.bn.items():
        arrays[f"bn/{k}/mean"] = st["mean"]
        arrays[f"bn/{k}/var"] = st["var"]
    for k, st in params.stats.items():
        arrays[f"stats/{k}/mean"] = st.mean
        arrays[f"stats/{k}/std"] = st.std
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint {meta.get('format')} v{meta.get('version')}")
        arch = LifterArchitecture(**meta["arch"])
        weights, bn, stats = {}, {}, {}
        for key in z.files:
            kind, _, rest = key.partition("/")
            if kind == "w":
                weights[rest] = z[key]
            elif kind in ("bn", "stats"):
                name, _, part = rest.rpartition("/")
                (bn if kind == "bn" else stats).setdefault(name, {})[part] = z[key]
    params = LifterParams(arch, weights, bn, {k: NormStats(v["mean"], v["std"]) for k, v in stats.items()})
    for stream in STREAMS:
        for name, fan_in, fan_out in _layer_names(arch, stream):
            w = weights.get(name + ".W")
            if w is None or w.shape != (fan_in, fan_out):
                raise ValueError(f"{path}: array {name}.W missing or misshapen")
    return params, meta.get("config")
