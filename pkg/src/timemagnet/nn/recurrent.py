"""LSTM, GRU and tanh-RNN layers, unidirectional cells composed into
bidirectional stacks.

Gate layout follows the usual convention: LSTM gates ``i, f, g, o``; GRU gates
``r, z, n`` with the reset gate applied to the recurrent candidate term.
Initial states are zero.
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor, as_tensor
from .layers import Dropout
from .module import Module, ModuleList, Parameter, kaiming_uniform

_GATES = {"lstm": 4, "gru": 3, "rnn": 1}


class RecurrentCell(Module):
    """One direction of one layer, run over a whole sequence."""

    def __init__(self, kind: str, input_size: int, hidden: int, rng):
        super().__init__()
        if kind not in _GATES:
            raise ValueError(f"unknown recurrent kind {kind!r}")
        g = _GATES[kind]
        self.kind, self.input_size, self.hidden = kind, input_size, hidden
        # no ReLU gain here: sqrt(6/fan_in) saturates tanh/sigmoid gates from the first step
        self.w_ih = Parameter(kaiming_uniform(rng, (input_size, g * hidden), input_size, gain=1 / math.sqrt(6.0)))
        self.w_hh = Parameter(kaiming_uniform(rng, (hidden, g * hidden), hidden, gain=1 / math.sqrt(6.0)))
        self.b_ih = Parameter(np.zeros(g * hidden))
        self.b_hh = Parameter(np.zeros(g * hidden))

    def forward(self, x: Tensor, reverse: bool = False) -> Tensor:
        b, t, f = x.shape
        if f != self.input_size:
            raise ShapeError(f"{self.kind}: input dim {f} does not match cell input {self.input_size}")
        hsz = self.hidden
        xw = ops.add(ops.matmul(ops.reshape(x, (b * t, f)), self.w_ih), self.b_ih)
        xw = ops.reshape(xw, (b, t, -1))
        h = Tensor(np.zeros((b, hsz)))
        c = Tensor(np.zeros((b, hsz)))
        outs = [None] * t
        steps = range(t - 1, -1, -1) if reverse else range(t)
        for s in steps:
            xs = ops.getitem(xw, (slice(None), s))
            hw = ops.add(ops.matmul(h, self.w_hh), self.b_hh)
            if self.kind == "lstm":
                z = ops.add(xs, hw)
                i = ops.sigmoid(z[:, 0:hsz])
                fg = ops.sigmoid(z[:, hsz:2 * hsz])
                g = ops.tanh(z[:, 2 * hsz:3 * hsz])
                o = ops.sigmoid(z[:, 3 * hsz:])
                c = ops.add(ops.mul(fg, c), ops.mul(i, g))
                h = ops.mul(o, ops.tanh(c))
            elif self.kind == "gru":
                r = ops.sigmoid(ops.add(xs[:, 0:hsz], hw[:, 0:hsz]))
                zg = ops.sigmoid(ops.add(xs[:, hsz:2 * hsz], hw[:, hsz:2 * hsz]))
                n = ops.tanh(ops.add(xs[:, 2 * hsz:], ops.mul(r, hw[:, 2 * hsz:])))
                h = ops.add(ops.mul(ops.sub(1.0, zg), n), ops.mul(zg, h))
            else:
                h = ops.tanh(ops.add(xs, hw))
            outs[s] = h
        return ops.stack(outs, axis=1)


class BiRecurrent(Module):
    """``layers`` stacked bidirectional layers of one cell kind; output dim 2H."""

    def __init__(self, kind: str, input_size: int, hidden: int, layers: int, rng, dropout: float = 0.0):
        super().__init__()
        self.kind, self.hidden = kind, hidden
        self.fwd = ModuleList()
        self.bwd = ModuleList()
        for li in range(layers):
            n_in = input_size if li == 0 else 2 * hidden
            self.fwd.append(RecurrentCell(kind, n_in, hidden, rng))
            self.bwd.append(RecurrentCell(kind, n_in, hidden, rng))
        self.drop = Dropout(dropout)

    @property
    def input_size(self) -> int:
        return self.fwd[0].input_size

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        for li, (f, b) in enumerate(zip(self.fwd, self.bwd)):
            if li:
                x = self.drop(x)
            x = ops.concat([f(x), b(x, reverse=True)], axis=-1)
        return x


class RecurrentStack(Module):
    """BiLSTM -> BiRNN -> BiGRU with dropout between stages."""

    ORDER = ("lstm", "rnn", "gru")

    def __init__(self, input_size: int, hidden: int, layers=(1, 1, 1), rng=None, dropout: float = 0.1):
        super().__init__()
        if len(layers) != 3 or min(layers) < 1:
            raise ValueError(f"need three positive layer counts for (lstm, rnn, gru), got {layers}")
        self.hidden = hidden
        self.stages = ModuleList()
        n_in = input_size
        for kind, n in zip(self.ORDER, layers):
            self.stages.append(BiRecurrent(kind, n_in, hidden, n, rng, dropout=dropout))
            n_in = 2 * hidden
        self.drop = Dropout(dropout)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        for si, stage in enumerate(self.stages):
            if x.shape[-1] != stage.input_size:
                raise ShapeError(f"recurrent stage {stage.kind}: got feature dim {x.shape[-1]}, "
                                 f"expected {stage.input_size}")
            if si:
                x = self.drop(x)
            x = stage(x)
        return x


def recurrent_forward(stack: RecurrentStack, x) -> Tensor:
    return stack(x)
