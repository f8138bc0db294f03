"""Recurrent policy that samples cell genotypes, trained by REINFORCE.

Decisions are made autoregressively: for the normal cell then the reduction
cell, each node picks (input_a, op_a, input_b, op_b). A single LSTM cell
carries state across all decisions; each decision's embedding is the next
input. Input choices for node k are restricted to the first k + 2 entries.
"""
from dataclasses import dataclass, field

import numpy as np

from .. import autograd as ag
from ..optim import OptimizerState, adam_step
from .genotype import CELL_TYPES, CellGenotype, Node

CONTROLLER_LR = 0.00035
BASELINE_DECAY = 0.95


@dataclass
class ControllerState:
    space: object
    params: dict
    hidden: int = 64
    temperature: float = 1.0
    baseline: float = 0.0
    opt: OptimizerState = field(default_factory=OptimizerState)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def init_controller(space, seed, hidden=64, temperature=1.0, init_range=0.1):
    rng = np.random.default_rng(seed)
    n_in = space.nodes_per_cell + 1
    n_ops = len(space.ops)

    def u(*shape):
        return rng.uniform(-init_range, init_range, shape)

    params = {
        "lstm.W": u(2 * hidden, 4 * hidden),
        "lstm.b": np.zeros(4 * hidden),
        "start": u(1, hidden),
        "emb.input": u(n_in, hidden),
        "emb.op": u(n_ops, hidden),
        "head.input.W": u(hidden, n_in),
        "head.input.b": np.zeros(n_in),
        "head.op.W": u(hidden, n_ops),
        "head.op.b": np.zeros(n_ops),
    }
    return ControllerState(space, params, hidden, temperature)


def decision_steps(space):
    """Sequence of (cell type, node, kind, n_choices) decisions."""
    steps = []
    for ct in CELL_TYPES:
        for k in range(space.nodes_per_cell):
            for kind in ("input", "op", "input", "op"):
                steps.append((ct, k, kind, k + 2 if kind == "input" else len(space.ops)))
    return steps


def _genotype_from_choices(space, choices):
    cells = {}
    it = iter(choices)
    for ct in CELL_TYPES:
        nodes = []
        for _ in range(space.nodes_per_cell):
            a, oa, b, ob = next(it), next(it), next(it), next(it)
            nodes.append(Node(a, oa, b, ob))
        cells[ct] = tuple(nodes)
    return CellGenotype(cells["normal"], cells["reduction"])


def genotype_choices(genotype):
    out = []
    for ct in CELL_TYPES:
        for n in genotype.cell(ct):
            out += [n.input_a, n.op_a, n.input_b, n.op_b]
    return out


# ---- numpy rollout (sampling) ------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_np(p, x, h, c, hidden):
    z = np.concatenate([x, h], axis=1) @ p["lstm.W"] + p["lstm.b"]
    i, f, o, g = (z[:, j * hidden:(j + 1) * hidden] for j in range(4))
    c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
    h = _sigmoid(o) * np.tanh(c)
    return h, c


def step_log_probs(ctrl, choices=None, rng=None, argmax=False):
    """Roll out the policy, returning (choices, per-step log-probability arrays).

    With ``choices`` given the rollout is teacher-forced; otherwise each step
    samples from the temperature-scaled softmax (or takes the argmax).
    """
    p = ctrl.params
    hsz = ctrl.hidden
    h = np.zeros((1, hsz))
    c = np.zeros((1, hsz))
    x = p["start"]
    taken, dists = [], []
    for i, (_, _, kind, n) in enumerate(decision_steps(ctrl.space)):
        h, c = _lstm_np(p, x, h, c, hsz)
        logits = (h @ p[f"head.{kind}.W"] + p[f"head.{kind}.b"])[0, :n] / ctrl.temperature
        z = logits - logits.max()
        logp = z - np.log(np.exp(z).sum())
        if choices is not None:
            a = int(choices[i])
        elif argmax:
            a = int(np.argmax(logp))
        else:
            a = int(rng.choice(n, p=np.exp(logp)))
        taken.append(a)
        dists.append(logp)
        x = p[f"emb.{kind}"][a:a + 1]
    return taken, dists


def sample_genotype(ctrl, seed, argmax=False):
    """Sample a genotype and its total log-probability (deterministic per seed)."""
    rng = np.random.default_rng(seed)
    taken, dists = step_log_probs(ctrl, rng=rng, argmax=argmax)
    log_prob = float(sum(d[a] for a, d in zip(taken, dists)))
    return _genotype_from_choices(ctrl.space, taken), log_prob


def genotype_log_prob(ctrl, genotype):
    taken, dists = step_log_probs(ctrl, choices=genotype_choices(genotype))
    return float(sum(d[a] for a, d in zip(taken, dists)))


# ---- differentiable rollout (policy gradient) ---------------------------------

def _log_prob_graph(ctrl, genotype):
    leaves = {k: ag.param(v, k) for k, v in ctrl.params.items()}
    hsz = ctrl.hidden
    h = ag.const(np.zeros((1, hsz)))
    c = ag.const(np.zeros((1, hsz)))
    x = leaves["start"]
    total = None
    choices = genotype_choices(genotype)
    for i, (_, _, kind, n) in enumerate(decision_steps(ctrl.space)):
        z = ag.linear(ag.concat([x, h], axis=1), leaves["lstm.W"], leaves["lstm.b"])
        gates = [ag.pick(z, np.arange(j * hsz, (j + 1) * hsz)) for j in range(4)]
        c = ag.add(ag.mul(ag.sigmoid(gates[1]), c), ag.mul(ag.sigmoid(gates[0]), ag.tanh(gates[3])))
        h = ag.mul(ag.sigmoid(gates[2]), ag.tanh(c))
        logits = ag.linear(h, leaves[f"head.{kind}.W"], leaves[f"head.{kind}.b"])
        logits = ag.scale(ag.pick(logits, np.arange(n)), 1.0 / ctrl.temperature)
        lp = ag.pick(ag.log_softmax(logits), choices[i])
        total = lp if total is None else ag.add(total, lp)
        x = ag.take_rows(leaves[f"emb.{kind}"], [choices[i]])
    return ag.reshape(total, ()), leaves


def policy_gradient(ctrl, genotype, advantage):
    """Gradients of ``-advantage * log_prob(genotype)`` w.r.t. controller params."""
    logp, leaves = _log_prob_graph(ctrl, genotype)
    loss = ag.scale(logp, -advantage)
    ag.backward(loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}


def reinforce_update(ctrl, genotype, reward, lr=CONTROLLER_LR, baseline_decay=BASELINE_DECAY):
    """One REINFORCE step with the EMA baseline; returns a new ControllerState.

    The advantage uses the baseline from before this reward is folded in.
    """
    advantage = reward - ctrl.baseline
    grads = policy_gradient(ctrl, genotype, advantage)
    params, opt = adam_step(ctrl.params, grads, ctrl.opt, lr)
    baseline = baseline_decay * ctrl.baseline + (1.0 - baseline_decay) * reward
    return ControllerState(ctrl.space, params, ctrl.hidden, ctrl.temperature, baseline, opt)
