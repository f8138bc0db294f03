"""Adam, Nesterov momentum and the learning-rate schedules used by all trainers.

Parameters are dicts of numpy arrays; updates return new dicts and states.
"""
import math
from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """Adam moments (``m``, ``v``) or Nesterov velocity (``m``), plus step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, opt, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update. Parameters without a gradient are left as is."""
    t = opt.step + 1
    new_p, new_m, new_v = dict(params), dict(opt.m), dict(opt.v)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m = beta1 * opt.m.get(k, 0.0) + (1.0 - beta1) * g
        v = beta2 * opt.v.get(k, 0.0) + (1.0 - beta2) * g * g
        new_p[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, OptimizerState(new_m, new_v, t)


def nesterov_step(params, grads, opt, lr, momentum=0.9, weight_decay=0.0):
    """Nesterov momentum in the ``buf = mu*buf + g; p -= lr*(g + mu*buf)`` form.

    With ``momentum=0`` this is plain SGD.
    """
    new_p, new_m = dict(params), dict(opt.m)
    for k, g in grads.items():
        if weight_decay:
            g = g + weight_decay * params[k]
        buf = momentum * opt.m.get(k, 0.0) + g
        new_p[k] = params[k] - lr * (g + momentum * buf)
        new_m[k] = buf
    return new_p, OptimizerState(new_m, {}, opt.step + 1)


def lr_schedule(epoch, base_lr=0.001, factor=0.5, every=50):
    """Step decay: ``base_lr * factor ** (epoch // every)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * factor ** (epoch // every)


def cosine_lr(step, total_steps, lr_max, lr_min):
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))
