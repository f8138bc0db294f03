"""Weight-sharing search loop: shared-weight epochs alternate with controller epochs."""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import TestLeakError
from ..optim import OptimizerState, cosine_lr, nesterov_step
from . import network
from .controller import (BASELINE_DECAY, CONTROLLER_LR, genotype_choices, init_controller,
                         reinforce_update, sample_genotype)
from .genotype import SearchSpace

log = logging.getLogger(__name__)


@dataclass
class SearchConfig:
    nodes_per_cell: int = 5
    stem_channels: int = 16
    cells_per_stage: int = 2
    epochs: int = 200
    batch_size: int = 32
    lr_max: float = 0.05
    lr_min: float = 0.0005
    momentum: float = 0.9
    weight_decay: float = 0.0
    controller_hidden: int = 64
    controller_lr: float = CONTROLLER_LR
    temperature: float = 1.0
    baseline_decay: float = BASELINE_DECAY
    samples_per_epoch: int = 10
    val_batch_size: int = 64
    n_candidates: int = 10
    seed: int = 0

    def space(self):
        return SearchSpace(self.nodes_per_cell, stem_channels=self.stem_channels)


@dataclass
class SupernetWeights:
    store: network.ParamStore
    opt: OptimizerState = field(default_factory=OptimizerState)
    step: int = 0


def init_supernet(space, num_classes, cells_per_stage, seed, in_channels=3):
    layout = network.macro_layout(cells_per_stage)
    return SupernetWeights(network.init_store(space, layout, num_classes, seed, in_channels))


def supernet_forward(w, genotype, x, mode="train"):
    """Class logits of the child ``genotype`` under the shared weights.

    ``mode="train"`` normalizes with batch statistics without touching the
    running estimates; ``mode="eval"`` uses the running estimates.
    """
    store = w.store if isinstance(w, SupernetWeights) else w
    return network.forward(store, genotype, x, mode)


def _accuracy(logits, labels):
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _no_test(images, what):
    if any(im.split_tag == "test" for im in images):
        raise TestLeakError(f"test-split images passed to {what}")


def train_shared_epoch(w, ctrl, images, cfg, seed, total_steps=None):
    """One pass of Nesterov-momentum SGD on the shared weights.

    Each mini-batch trains the child sampled by ``ctrl``; only the keys on its
    paths are updated. Returns ``(w, mean loss)``; ``w`` is updated in place.
    """
    _no_test(images, "shared-weight training")
    x_all = network.images_to_array(images)
    y_all = network.labels_of(images)
    rng = np.random.default_rng(seed)
    n = len(y_all)
    steps_per_epoch = -(-n // cfg.batch_size)
    total = total_steps if total_steps is not None else max(w.step + steps_per_epoch, 1)
    perm = rng.permutation(n)
    losses = []
    for start in range(0, n, cfg.batch_size):
        idx = perm[start:start + cfg.batch_size]
        g, _ = sample_genotype(ctrl, int(rng.integers(2**31)))
        loss, grads, _ = network.loss_and_grads(w.store, g, x_all[idx], y_all[idx], train=True,
                                                update_stats=True)
        lr = cosine_lr(min(w.step, total), total, cfg.lr_max, cfg.lr_min)
        w.store.params, w.opt = nesterov_step(w.store.params, grads, w.opt, lr, cfg.momentum,
                                              cfg.weight_decay)
        w.step += 1
        losses.append(loss)
    return w, float(np.mean(losses))


def _val_batch(x, y, size, rng):
    if len(y) <= size:
        return x, y
    idx = rng.choice(len(y), size, replace=False)
    return x[idx], y[idx]


def controller_epoch(ctrl, w, val_images, samples_per_epoch, seed, cfg=None, reward_fn=None):
    """REINFORCE on validation-batch accuracy; returns ``(ctrl, mean reward)``."""
    if not val_images:
        raise ValueError("validation split is empty")
    _no_test(val_images, "controller training")
    cfg = cfg or SearchConfig()
    x = network.images_to_array(val_images)
    y = network.labels_of(val_images)
    rng = np.random.default_rng(seed)
    rewards = []
    for _ in range(samples_per_epoch):
        g, _ = sample_genotype(ctrl, int(rng.integers(2**31)))
        xb, yb = _val_batch(x, y, cfg.val_batch_size, rng)
        reward = reward_fn(g) if reward_fn else _accuracy(supernet_forward(w, g, xb, "train"), yb)
        ctrl = reinforce_update(ctrl, g, reward, cfg.controller_lr, cfg.baseline_decay)
        rewards.append(reward)
    return ctrl, float(np.mean(rewards))


def derive_best_genotype(ctrl, w, val_images, n_candidates, seed, score_fn=None):
    """Best of ``n_candidates`` sampled genotypes by full-validation accuracy.

    Ties go to the higher log-probability, then the lexicographically smaller
    genotype. ``score_fn`` replaces the accuracy evaluation when given.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    rng = np.random.default_rng(seed)
    cands = [sample_genotype(ctrl, int(rng.integers(2**31))) for _ in range(n_candidates)]
    if score_fn is None:
        _no_test(val_images, "genotype derivation")
        x = network.images_to_array(val_images)
        y = network.labels_of(val_images)
        score_fn = lambda g: _accuracy(supernet_forward(w, g, x, "train"), y)  # noqa: E731
    scored = [(score_fn(g), lp, g) for g, lp in cands]
    best = min(scored, key=lambda s: (-s[0], -s[1], genotype_choices(s[2])))
    return best[2]


def run_search(train_images, val_images, cfg, num_classes=None):
    """Alternate shared-weight and controller epochs, then derive a genotype.

    Returns ``(genotype, history, controller, weights)``; history has one
    ``{"epoch", "loss", "reward"}`` entry per epoch.
    """
    if not train_images or not val_images:
        raise ValueError("search needs nonempty train and validation splits")
    space = cfg.space()
    k = num_classes or int(max(im.label for im in train_images + val_images)) + 1
    ctrl = init_controller(space, cfg.seed, cfg.controller_hidden, cfg.temperature)
    w = init_supernet(space, k, cfg.cells_per_stage, cfg.seed + 1)
    steps_per_epoch = -(-len(train_images) // cfg.batch_size)
    total = max(cfg.epochs * steps_per_epoch, 1)
    seeds = np.random.default_rng(cfg.seed + 2).integers(2**31, size=(cfg.epochs, 2))
    history = []
    for epoch in range(cfg.epochs):
        w, loss = train_shared_epoch(w, ctrl, train_images, cfg, int(seeds[epoch, 0]), total)
        ctrl, reward = controller_epoch(ctrl, w, val_images, cfg.samples_per_epoch,
                                        int(seeds[epoch, 1]), cfg)
        history.append({"epoch": epoch, "loss": loss, "reward": reward})
        log.info("search epoch %d loss %.4f reward %.3f baseline %.3f", epoch, loss, reward, ctrl.baseline)
    genotype = derive_best_genotype(ctrl, w, val_images, cfg.n_candidates, cfg.seed + 3)
    return genotype, history, ctrl, w


def search_config_dict(cfg):
    return asdict(cfg)
