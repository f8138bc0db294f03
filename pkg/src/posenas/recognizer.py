"""Final action classifier built from a derived genotype, its training and evaluation."""
import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import spmf
from .data_model import select_classes, split_dataset
from .errors import NumericError, TestLeakError
from .nas import network
from .nas.search import SearchConfig, run_search
from .optim import OptimizerState, cosine_lr, nesterov_step

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    crop_padding: int = 4
    hflip_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must be in [0, 1]")


@dataclass
class FinalNetConfig:
    num_classes: int
    cells_per_stage: int = 2
    stem_channels: int = 16
    epochs: int = 30
    batch_size: int = 16
    lr_max: float = 0.05
    lr_min: float = 0.0005
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)


@dataclass
class RecognizerParams:
    genotype: object
    config: FinalNetConfig
    store: network.ParamStore


def build_final_network(genotype, config, seed, space=None, inherit_from=None):
    """Fresh He-initialized standalone network holding only the genotype's paths.

    With ``inherit_from`` (a supernet ``ParamStore``) the arrays are copied from
    the shared weights instead.
    """
    from .nas.genotype import SearchSpace

    space = space or SearchSpace(len(genotype.normal), stem_channels=config.stem_channels)
    if space.stem_channels != config.stem_channels:
        space = dataclasses.replace(space, stem_channels=config.stem_channels)
    try:
        genotype.validate(space)
    except ValueError as exc:
        raise ValueError(f"genotype does not fit the search space: {exc}") from None
    layout = network.macro_layout(config.cells_per_stage)
    store = network.init_store(space, layout, config.num_classes, seed, genotype=genotype)
    if inherit_from is not None:
        for k in store.params:
            store.params[k] = inherit_from.params[k].copy()
        for k in store.bn:
            store.bn[k] = {s: v.copy() for s, v in inherit_from.bn[k].items()}
    return RecognizerParams(genotype, config, store)


def augment(img, config, seed):
    """Zero-pad, seeded random crop back to H x W, then a horizontal flip with ``hflip_prob``.

    A horizontal flip reverses the time axis of the encoding.
    """
    pix = img.pixels if isinstance(img, spmf.SPMFImage) else np.asarray(img)
    h, w, _ = pix.shape
    p = config.crop_padding
    if p >= min(h, w):
        raise ValueError("crop_padding must be smaller than the image")
    rng = np.random.default_rng(seed)
    if p > 0:
        padded = np.pad(pix, ((p, p), (p, p), (0, 0)))
        dy, dx = rng.integers(0, 2 * p + 1, size=2)
        out = padded[dy:dy + h, dx:dx + w]
    else:
        out = pix
    if config.hflip_prob > 0 and rng.random() < config.hflip_prob:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)
    if isinstance(img, spmf.SPMFImage):
        return spmf.SPMFImage(out, img.sample_id, img.label, img.split_tag)
    return out


def train_recognizer(params, images, config=None, seed=0):
    """Seeded mini-batch cross-entropy training, Nesterov momentum with cosine lr.

    Returns ``(params, history)``; history[0] is the loss at initialization on
    the training set, then one mean train loss per epoch.
    """
    if not images:
        raise ValueError("empty training set")
    if any(im.split_tag == "test" for im in images):
        raise TestLeakError("test-split images passed to recognizer training")
    cfg = config or params.config
    store = params.store
    g = params.genotype
    x = network.images_to_array(images)
    y = network.labels_of(images)
    rng = np.random.default_rng(seed)
    n = len(y)
    steps = cfg.epochs * -(-n // cfg.batch_size)
    opt = OptimizerState()
    init_loss, _, _ = network.loss_and_grads(store, g, x, y, train=True, update_stats=False)
    history = [init_loss]
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            xb = np.stack([augment(x[i].transpose(1, 2, 0), cfg.augment, int(rng.integers(2**31)))
                           for i in idx]).transpose(0, 3, 1, 2)
            loss, grads, _ = network.loss_and_grads(store, g, xb, y[idx], train=True, update_stats=True)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite recognizer loss at epoch {epoch}")
            lr = cosine_lr(min(step, steps), steps, cfg.lr_max, cfg.lr_min)
            store.params, opt = nesterov_step(store.params, grads, opt, lr, cfg.momentum, cfg.weight_decay)
            step += 1
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.info("recognizer epoch %d loss %.4f", epoch, history[-1])
    return params, history


def predict(params, images):
    x = network.images_to_array(images)
    return np.argmax(network.forward(params.store, params.genotype, x, "eval"), axis=1)


def evaluate_accuracy(params, images, predictions=None):
    """Accuracy and K x K confusion matrix (rows: true class, columns: predicted)."""
    if not images:
        raise ValueError("no images to evaluate")
    k = params.config.num_classes if params is not None else None
    pred = np.asarray(predictions) if predictions is not None else predict(params, images)
    labels = network.labels_of(images)
    k = k or int(max(labels.max(), pred.max())) + 1
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    return float(np.trace(conf) / len(labels)), conf


def _carve_val(train, fraction, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(train))
    n_val = max(1, int(round(fraction * len(train))))
    val = [train[i] for i in sorted(perm[:n_val])]
    rest = [train[i] for i in sorted(perm[n_val:])]
    return rest, val


def _split_units(samples, protocol, subsets, folds):
    """(name, samples, fold) units evaluated by a protocol."""
    if protocol == "msr_half":
        if not subsets:
            return [("all", samples, None)]
        return [(name, select_classes(samples, [c - 1 for c in ids]), None) for name, ids in subsets.items()]
    if protocol == "sbu_5fold":
        return [(f"fold{f}", samples, f) for f in (folds if folds is not None else range(5))]
    return [(protocol, samples, None)]


def evaluate_protocol(genotype, samples, protocol, config, seed=0, encoder=spmf.EncoderConfig(),
                      subsets=None, search_config=None, val_fraction=0.2, folds=None):
    """Split, encode, build, train and evaluate for every subset or fold of a protocol.

    With ``genotype=None`` a search (``search_config``) runs per split on a
    validation carve of the training data. Returns a report dict with per-split
    accuracies, confusion matrices and their arithmetic mean.
    """
    results = []
    for name, subset, fold in _split_units(samples, protocol, subsets, folds):
        train, test = split_dataset(subset, protocol, fold=fold, seed=seed)
        n_classes = len({s.label for s in subset})
        tr_img = spmf.encode_samples(train, encoder)
        te_img = spmf.encode_samples(test, encoder)
        g = genotype
        if g is None:
            fit, val = _carve_val(tr_img, val_fraction, seed)
            g, _, _, _ = run_search(fit, val, search_config or SearchConfig(), num_classes=n_classes)
        cfg = dataclasses.replace(config, num_classes=n_classes)
        params = build_final_network(g, cfg, seed)
        params, _ = train_recognizer(params, tr_img, cfg, seed)
        acc, conf = evaluate_accuracy(params, te_img)
        results.append({"split": name, "accuracy": acc, "confusion": conf.tolist(),
                        "n_train": len(train), "n_test": len(test)})
        log.info("%s %s accuracy %.4f", protocol, name, acc)
    mean = float(np.mean([r["accuracy"] for r in results]))
    return {"protocol": protocol, "splits": results, "average": mean}


def format_table_row(report, method="Ours"):
    """One table row: per-split accuracies (%) then the average, space aligned."""
    cells = [f"{100 * r['accuracy']:.2f}" for r in report["splits"]]
    header = " | ".join(["Method"] + [r["split"] for r in report["splits"]] + ["Aver."])
    row = " | ".join([method] + cells + [f"{100 * report['average']:.2f}"])
    return header + "\n" + row


# ---- checkpoints ------------------------------------------------------------

RECOGNIZER_FORMAT = "posenas-recognizer"


def save_recognizer(path, params):
    """npz container with the genotype, search space and config in a JSON ``meta`` entry."""
    space = params.store.space
    meta = {
        "format": RECOGNIZER_FORMAT,
        "version": 1,
        "search_space": space.describe(),
        "genotype": params.genotype.to_dict(space),
        "config": dataclasses.asdict(params.config),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for k, v in params.store.params.items():
        arrays[f"p/{k}"] = np.ascontiguousarray(v)
    for k, st in params.store.bn.items():
        arrays[f"bn/{k}/mean"] = st["mean"]
        arrays[f"bn/{k}/var"] = st["var"]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_recognizer(path):
    from .nas.genotype import CellGenotype, SearchSpace

    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != RECOGNIZER_FORMAT or meta.get("version") != 1:
            raise ValueError(f"{path}: not a recognizer checkpoint")
        sd = meta["search_space"]
        space = SearchSpace(sd["nodes_per_cell"], tuple(sd["ops"]), sd["stem_channels"])
        genotype = CellGenotype.from_dict(meta["genotype"], space)
        config = FinalNetConfig(**meta["config"])
        params = build_final_network(genotype, config, 0, space)
        for key in z.files:
            kind, _, rest = key.partition("/")
            if kind == "p":
                if rest not in params.store.params or params.store.params[rest].shape != z[key].shape:
                    raise ValueError(f"{path}: array {rest} does not match the genotype")
                params.store.params[rest] = z[key]
            elif kind == "bn":
                name, _, part = rest.rpartition("/")
                params.store.bn[name][part] = z[key]
    return params
