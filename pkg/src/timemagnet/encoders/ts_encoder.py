"""T5-style encoder-only transformer for accelerometer windows.

Each time step is one token carrying all channels. Tokens are embedded with
a learnable linear map, optionally offset by a sinusoidal table, and pass
through pre-norm blocks whose Q/K/V projections are LoRA adapters over
frozen random bases. An average+max pooling head produces one vector per
window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor, as_tensor
from ..nn import Dropout, Linear, Module, ModuleList, MultiHeadAttention, Parameter
from ..nn.layers import layer_norm_rms, linear_forward
from ..nn.module import kaiming_uniform


@dataclass
class EncoderConfig:
    dim: int = 32
    layers: int = 2
    heads: int = 2
    head_dim: int = 16
    ff_dim: int = 64
    dropout: float = 0.1
    ln_eps: float = 1e-6
    buckets: int = 32
    max_distance: int = 128
    max_seq: int = 50
    in_channels: int = 3
    rel_bias: bool = True
    sinusoidal: bool = True
    use_lora: bool = True
    lora_rank: int = 4
    lora_alpha: float = 8.0

    def __post_init__(self):
        for k in ("dim", "layers", "heads", "head_dim", "ff_dim", "max_seq", "in_channels"):
            if getattr(self, k) <= 0:
                raise ValueError(f"EncoderConfig.{k} must be positive")
        if self.heads * self.head_dim != self.dim:
            raise ShapeError(f"heads*head_dim ({self.heads}*{self.head_dim}) != dim {self.dim}")

    @classmethod
    def from_run(cls, cfg) -> "EncoderConfig":
        return cls(dim=cfg.ts_dim, layers=cfg.ts_layers, heads=cfg.ts_heads, head_dim=cfg.ts_head_dim,
                   ff_dim=cfg.ts_ff_dim, dropout=cfg.ts_dropout, ln_eps=cfg.ts_ln_eps,
                   buckets=cfg.ts_buckets, max_distance=cfg.ts_max_distance, max_seq=cfg.ts_max_seq,
                   in_channels=cfg.accel_channels, rel_bias=cfg.ts_rel_bias, sinusoidal=cfg.ts_sinusoidal,
                   use_lora=cfg.use_lora, lora_rank=cfg.lora_rank, lora_alpha=cfg.lora_alpha)


def patchify(x, max_seq: int) -> Tensor:
    """B×T×d window -> B×T×d token sequence, one token per time step."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"patchify expects B×T×d, got {x.shape}")
    if x.shape[1] > max_seq:
        raise ShapeError(f"sequence length {x.shape[1]} exceeds max_seq {max_seq}")
    return x


def sinusoidal_encoding(c: int, d: int) -> np.ndarray:
    """Interleaved table: even dims sin(pos/10000^(2i/d)), odd dims cos of the same angle."""
    if d % 2:
        raise ShapeError(f"sinusoidal encoding needs an even dim, got {d}")
    pos = np.arange(c, dtype=np.float64)[:, None]
    div = np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.zeros((c, d))
    table[:, 0::2] = np.sin(pos / div)
    table[:, 1::2] = np.cos(pos / div)
    return table


class LoraLinear(Module):
    """``x W0 + (alpha/r) (x A) B`` with W0 frozen and B zero-initialised."""

    def __init__(self, in_features: int, out_features: int, rank: int, alpha: float, rng):
        super().__init__()
        if rank < 1:
            raise ValueError(f"LoRA rank must be >= 1, got {rank}")
        self.in_features, self.out_features = in_features, out_features
        self.rank, self.alpha = rank, alpha
        self.scale = alpha / rank
        self.w0 = Parameter(kaiming_uniform(rng, (in_features, out_features), in_features), frozen=True)
        self.a = Parameter(kaiming_uniform(rng, (in_features, rank), in_features))
        self.b = Parameter(np.zeros((rank, out_features)))

    def forward(self, x):
        return lora_forward(self, x)

    def effective_weight(self) -> np.ndarray:
        return self.w0.data + self.scale * self.a.data @ self.b.data


def lora_forward(layer: LoraLinear, x) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != layer.in_features:
        raise ShapeError(f"lora: input dim {x.shape[-1]} does not match {layer.in_features}")
    base = linear_forward(x, layer.w0)
    low = linear_forward(linear_forward(x, layer.a), layer.b)
    return ops.add(base, ops.mul(low, layer.scale))


class GatedGeluFF(Module):
    def __init__(self, dim: int, ff_dim: int, rng, dropout: float):
        super().__init__()
        self.wi_0 = Linear(dim, ff_dim, rng, bias=False)
        self.wi_1 = Linear(dim, ff_dim, rng, bias=False)
        self.wo = Linear(ff_dim, dim, rng, bias=False)
        self.drop = Dropout(dropout)

    def forward(self, x):
        h = ops.mul(ops.gelu(self.wi_0(x)), self.wi_1(x))
        return self.wo(self.drop(h))


class EncoderBlock(Module):
    def __init__(self, cfg: EncoderConfig, rng):
        super().__init__()
        factory = None
        if cfg.use_lora:
            factory = lambda i, o: LoraLinear(i, o, cfg.lora_rank, cfg.lora_alpha, rng)  # noqa: E731
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, cfg.head_dim, rng, dropout=cfg.dropout,
                                       rel_bias=cfg.rel_bias, num_buckets=cfg.buckets,
                                       max_distance=cfg.max_distance, qkv_factory=factory)
        self.ln_attn = Parameter(np.ones(cfg.dim))
        self.ff = GatedGeluFF(cfg.dim, cfg.ff_dim, rng, cfg.dropout)
        self.ln_ff = Parameter(np.ones(cfg.dim))
        self.drop = Dropout(cfg.dropout)
        self.eps = cfg.ln_eps

    def forward(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.drop(self.attn(layer_norm_rms(x, self.ln_attn, self.eps))))
        return ops.add(x, self.drop(self.ff(layer_norm_rms(x, self.ln_ff, self.eps))))


class TSEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.embed = Linear(cfg.in_channels, cfg.dim, rng)
        self.blocks = ModuleList([EncoderBlock(cfg, rng) for _ in range(cfg.layers)])
        self.ln_final = Parameter(np.ones(cfg.dim))
        self.drop = Dropout(cfg.dropout)
        self.head = Linear(2 * cfg.dim, cfg.dim, rng)
        self._pos = sinusoidal_encoding(cfg.max_seq, cfg.dim)

    def encode(self, x) -> Tensor:
        """B×T×d -> B×T×D hidden states."""
        return encoder_forward(self, patchify(x, self.cfg.max_seq))

    def forward(self, x) -> Tensor:
        return pool_head(self.encode(x), self.head)


def encoder_forward(enc: TSEncoder, tokens: Tensor) -> Tensor:
    cfg = enc.cfg
    z = enc.embed(tokens)
    if cfg.sinusoidal:
        z = ops.add(z, enc._pos[: tokens.shape[1]])
    z = enc.drop(z)
    for block in enc.blocks:
        z = block(z)
    return enc.drop(layer_norm_rms(z, enc.ln_final, cfg.ln_eps))


def pool_head(h, head: Linear = None) -> Tensor:
    """concat(mean over time, max over time), then the feedforward head."""
    h = as_tensor(h)
    pooled = ops.concat([ops.mean(h, axis=1), ops.max(h, axis=1)], axis=-1)
    return pooled if head is None else head(pooled)


def trainable_param_report(model: Module) -> dict:
    """Exact parameter counts split by the frozen flag."""
    trainable = frozen = 0
    for _, p in model.named_parameters():
        if p.frozen:
            frozen += p.size
        else:
            trainable += p.size
    return {"trainable": trainable, "frozen": frozen, "total": trainable + frozen}


def lora_projection_counts(in_features: int, out_features: int, rank: int) -> dict:
    """Closed-form counts for one LoRA-wrapped projection."""
    return {"trainable": rank * (in_features + out_features), "frozen": in_features * out_features}


__all__ = [
    "EncoderConfig", "LoraLinear", "TSEncoder", "encoder_forward", "lora_forward",
    "lora_projection_counts", "patchify", "pool_head", "sinusoidal_encoding", "trainable_param_report",
]
