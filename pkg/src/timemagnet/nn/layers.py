from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor, as_tensor
from .module import Module, Parameter, kaiming_uniform


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as in×out."""

    def __init__(self, in_features: int, out_features: int, rng, bias: bool = True, frozen: bool = False):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(kaiming_uniform(rng, (in_features, out_features), in_features), frozen=frozen)
        self.bias = Parameter(np.zeros(out_features), frozen=frozen) if bias else None

    def forward(self, x):
        x = as_tensor(x)
        return linear_forward(x, self.weight, self.bias)


def linear_forward(x: Tensor, weight: Tensor, bias=None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    y = ops.matmul(ops.reshape(x, (-1, x.shape[-1])), weight)
    if bias is not None:
        y = ops.add(y, bias)
    return ops.reshape(y, lead + (weight.shape[1],))


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng, kernel_size: int = 3, padding: int = 1):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.in_channels = in_channels
        self.padding = padding
        self.weight = Parameter(kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel batch normalisation over N, H, W."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return batchnorm2d_forward(self, as_tensor(x))


def batchnorm2d_forward(bn: BatchNorm2d, x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    shape = (1, c, 1, 1)
    if bn.training:
        if n * h * w < 2 or n < 2:
            raise ValueError(f"batchnorm in train mode needs batch size >= 2, got {n}")
        mu = ops.mean(x, axis=(0, 2, 3), keepdims=True)
        xc = ops.sub(x, mu)
        var = ops.mean(ops.mul(xc, xc), axis=(0, 2, 3), keepdims=True)
        xhat = ops.div(xc, ops.sqrt(ops.add(var, bn.eps)))
        m = n * h * w
        mom = bn.momentum
        object.__setattr__(bn, "running_mean", (1 - mom) * bn.running_mean + mom * mu.data.reshape(c))
        object.__setattr__(bn, "running_var", (1 - mom) * bn.running_var + mom * var.data.reshape(c) * m / (m - 1))
    else:
        xhat = ops.div(ops.sub(x, bn.running_mean.reshape(shape)), np.sqrt(bn.running_var.reshape(shape) + bn.eps))
    return ops.add(ops.mul(xhat, ops.reshape(bn.gamma, shape)), ops.reshape(bn.beta, shape))


class RMSNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(dim))

    def forward(self, x):
        return rmsnorm_forward(as_tensor(x), self.gain, self.eps)


def rmsnorm_forward(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    ms = ops.mean(ops.mul(x, x), axis=-1, keepdims=True)
    return ops.mul(ops.mul(x, ops.power(ops.add(ms, eps), -0.5)), gain)


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x):
        return dropout_forward(as_tensor(x), self.rate, self.training, self.rng)


def dropout_forward(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise RuntimeError("dropout in train mode needs an rng; call module.train(rng)")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ops.mul(x, keep)


def pool2d(x, kind: str) -> Tensor:
    return ops.pool2d(x, kind)


class SwiGLU(Module):
    """``(silu(x W_gate) * (x W_val)) W_out``."""

    def __init__(self, dim: int, hidden: int, rng):
        super().__init__()
        self.w_gate = Linear(dim, hidden, rng, bias=False)
        self.w_val = Linear(dim, hidden, rng, bias=False)
        self.w_out = Linear(hidden, dim, rng, bias=False)

    def forward(self, x):
        return swiglu_forward(as_tensor(x), self.w_gate.weight, self.w_val.weight, self.w_out.weight)


def swiglu_forward(x: Tensor, w_gate, w_val, w_out) -> Tensor:
    gate = ops.silu(linear_forward(x, w_gate))
    return linear_forward(ops.mul(gate, linear_forward(x, w_val)), w_out)


def layer_norm_rms(x: Tensor, gain: Tensor, eps: float) -> Tensor:
    """Scale-only layer norm as used by T5 (no mean subtraction, no bias)."""
    return rmsnorm_forward(x, gain, eps)


__all__ = [
    "BatchNorm2d", "Conv2d", "Dropout", "Linear", "RMSNorm", "SwiGLU",
    "batchnorm2d_forward", "dropout_forward", "layer_norm_rms", "linear_forward",
    "pool2d", "rmsnorm_forward", "swiglu_forward",
]
