"""DART-CNN: conv feature extractor with dual (spatial x channel) attention,
per-frame projection, a bidirectional LSTM->RNN->GRU stack with a residual
path, and temporal mean pooling."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor, as_tensor
from ..nn import BatchNorm2d, Conv2d, Linear, Module, ModuleList, RecurrentStack
from ..nn.layers import linear_forward


@dataclass
class DartConfig:
    channels: list = field(default_factory=lambda: [8, 16])
    reduction: int = 4
    emb_dim: int = 32
    hidden: int = 16
    layers: tuple = (1, 1, 1)
    dropout: float = 0.1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    grid: tuple = (12, 16)

    def __post_init__(self):
        if len(self.channels) < 2:
            raise ValueError("DART-CNN needs at least two conv blocks")
        if self.emb_dim != 2 * self.hidden:
            raise ShapeError(f"emb_dim {self.emb_dim} must equal 2*hidden ({2 * self.hidden})")
        if self.channels[-1] % self.reduction:
            raise ShapeError(f"channel count {self.channels[-1]} not divisible by reduction {self.reduction}")
        h, w = self.grid
        if h % 2 or w % 2:
            raise ShapeError(f"grid {self.grid} must have even dims for the 2x2 pool")

    @classmethod
    def from_run(cls, cfg, modality: str) -> "DartConfig":
        grid = tuple(cfg.dc_grid if modality == "dc" else cfg.pm_grid)
        return cls(channels=list(cfg.dart_channels), reduction=cfg.dart_reduction, emb_dim=cfg.dart_emb,
                   hidden=cfg.dart_hidden, layers=tuple(cfg.dart_layers), dropout=cfg.dart_dropout,
                   bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps, grid=grid)


class ConvBlock(Module):
    def __init__(self, c_in: int, c_out: int, rng, momentum: float, eps: float):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, rng, kernel_size=3, padding=1)
        self.bn = BatchNorm2d(c_out, momentum=momentum, eps=eps)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)))


class DualAttention(Module):
    """``F * sigmoid(conv1x1(F)) * sigmoid(W2 relu(W1 GAP(F)))``."""

    def __init__(self, channels: int, reduction: int, rng):
        super().__init__()
        if channels % reduction:
            raise ShapeError(f"channels {channels} not divisible by reduction ratio {reduction}")
        self.spatial = Conv2d(channels, 1, rng, kernel_size=1, padding=0)
        self.fc1 = Linear(channels, channels // reduction, rng)
        self.fc2 = Linear(channels // reduction, channels, rng)

    def maps(self, f: Tensor):
        a_s = ops.sigmoid(self.spatial(f))  # N,1,H,W
        gap = ops.mean(f, axis=(2, 3))  # N,C
        a_c = ops.sigmoid(self.fc2(ops.relu(self.fc1(gap))))
        n, c = a_c.shape
        return a_s, ops.reshape(a_c, (n, c, 1, 1))

    def forward(self, f):
        f = as_tensor(f)
        a_s, a_c = self.maps(f)
        return ops.mul(ops.mul(f, a_s), a_c)


def dual_attention(layer: DualAttention, f) -> Tensor:
    return layer(f)


class DartCNN(Module):
    def __init__(self, cfg: DartConfig, rng):
        super().__init__()
        self.cfg = cfg
        chans = [1] + list(cfg.channels)
        self.convs = ModuleList([ConvBlock(chans[i], chans[i + 1], rng, cfg.bn_momentum, cfg.bn_eps)
                                 for i in range(len(cfg.channels))])
        self.attention = DualAttention(cfg.channels[-1], cfg.reduction, rng)
        self.proj = Linear(cfg.channels[-1], cfg.emb_dim, rng)
        self.recurrent = RecurrentStack(cfg.emb_dim, cfg.hidden, cfg.layers, rng, dropout=cfg.dropout)

    def conv_encoder(self, x) -> Tensor:
        """B×T×H×W frames -> (B·T)×C×H'×W' features, pooled once after block 2."""
        x = as_tensor(x)
        if x.ndim != 4:
            raise ShapeError(f"DART-CNN expects B×T×H×W frames, got {x.shape}")
        b, t, h, w = x.shape
        if (h, w) != tuple(self.cfg.grid):
            raise ShapeError(f"frame grid {(h, w)} does not match configured {tuple(self.cfg.grid)}")
        f = ops.reshape(x, (b * t, 1, h, w))
        for i, block in enumerate(self.convs):
            f = block(f)
            if i == 1:
                f = ops.max_pool2x2(f)
        return f

    def project(self, f_attn: Tensor, b: int, t: int) -> Tensor:
        """GAP -> flatten -> linear+ReLU -> B×T×D_emb."""
        return project_and_reshape(f_attn, self.proj, b, t)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        b, t = x.shape[:2]
        f_out = self.project(self.attention(self.conv_encoder(x)), b, t)
        h_rec = ops.add(self.recurrent(f_out), f_out)
        return ops.mean(h_rec, axis=1)


def project_and_reshape(f_attn, proj: Linear, b: int, t: int) -> Tensor:
    gap = ops.mean(as_tensor(f_attn), axis=(2, 3))
    return ops.reshape(ops.relu(linear_forward(gap, proj.weight, proj.bias)), (b, t, proj.out_features))


def dart_param_count(cfg: DartConfig) -> int:
    """Closed-form parameter count for one DART-CNN instance."""
    chans = [1] + list(cfg.channels)
    n = 0
    for ci, co in zip(chans[:-1], chans[1:]):
        n += co * ci * 9 + co + 2 * co  # conv + bias + BN gamma/beta
    c = cfg.channels[-1]
    r = c // cfg.reduction
    n += c + 1 + c * r + r + r * c + c  # spatial 1x1 conv, fc1, fc2
    n += c * cfg.emb_dim + cfg.emb_dim
    gates = {"lstm": 4, "rnn": 1, "gru": 3}
    n_in = cfg.emb_dim
    h = cfg.hidden
    for kind, layers in zip(("lstm", "rnn", "gru"), cfg.layers):
        g = gates[kind]
        for li in range(layers):
            fin = n_in if li == 0 else 2 * h
            n += 2 * (fin * g * h + h * g * h + 2 * g * h)
        n_in = 2 * h
    return n


def dart_forward(model: DartCNN, x) -> Tensor:
    return model(x)

