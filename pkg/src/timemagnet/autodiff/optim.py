"""AdamW with decoupled weight decay, global-norm clipping, weighted cross-entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state: OptimizerState) -> OptimizerState:
    """One AdamW update, in place on ``params[i].data``.

    ``params`` and ``grads`` are parallel sequences; moments are keyed by
    position. Weight decay is applied as ``θ -= lr * wd * θ`` before the
    moment-based step.
    """
    b1, b2 = state.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        data = p.data if isinstance(p, Tensor) else p
        g = np.asarray(g, dtype=np.float64)
        if g.shape != data.shape:
            raise ShapeError(f"adamw: parameter {i} has shape {data.shape} but gradient {g.shape}")
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(data)
            state.v[i] = np.zeros_like(data)
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            data -= state.lr * state.weight_decay * data
        data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class AdamW:
    """Convenience wrapper binding an :class:`OptimizerState` to parameters."""

    def __init__(self, params, lr=1e-4, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, betas=tuple(betas), eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self, grads=None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def global_norm(grads) -> float:
    return math.sqrt(float(sum(float(np.sum(np.square(g))) for g in grads)))


def clip_global_norm(grads, max_norm: float):
    """Scale all gradients by ``max_norm / norm`` when their joint L2 norm exceeds ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


def weighted_cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Class-weighted cross-entropy normalised by the sum of the selected weights."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"label {int(bad)} out of range [0, {c})")
    w = np.ones(c) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (c,):
        raise ShapeError(f"class_weights shape {w.shape} does not match {c} classes")
    sel = w[labels]
    logp = ops.log_softmax(logits, axis=-1)
    picked = ops.getitem(logp, (np.arange(b), labels))
    return ops.mul(ops.sum(ops.mul(picked, sel)), -1.0 / float(sel.sum()))
