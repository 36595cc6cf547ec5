"""Multi-head self-attention with optional T5-style relative position bias."""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor, as_tensor
from .layers import Dropout, Linear
from .module import Module, Parameter


def relative_position_bucket(rel, num_buckets: int = 32, max_distance: int = 128):
    """Map ``key_pos - query_pos`` to a bucket in ``[0, num_buckets)``.

    Bidirectional: half the buckets per sign (positive offsets shifted by
    ``num_buckets // 2``); within a sign the first half are exact distances,
    the rest grow logarithmically up to ``max_distance`` and then clamp.
    """
    rel = np.asarray(rel, dtype=np.int64)
    half = num_buckets // 2
    out = (rel > 0).astype(np.int64) * half
    n = np.abs(rel)
    max_exact = half // 2
    small = n < max_exact
    with np.errstate(divide="ignore"):
        large = max_exact + (
            np.log(np.maximum(n, 1) / max_exact) / math.log(max_distance / max_exact) * (half - max_exact)
        ).astype(np.int64)
    large = np.minimum(large, half - 1)
    out = out + np.where(small, n, large)
    return int(out) if out.ndim == 0 else out


class MultiHeadAttention(Module):
    """Q/K/V projections may be swapped for LoRA-wrapped ones by the caller."""

    def __init__(self, dim: int, heads: int, head_dim: int, rng, dropout: float = 0.0,
                 rel_bias: bool = False, num_buckets: int = 32, max_distance: int = 128,
                 qkv_factory=None):
        super().__init__()
        if heads * head_dim != dim:
            raise ShapeError(f"heads*head_dim = {heads}*{head_dim} must equal model dim {dim}")
        self.dim, self.heads, self.head_dim = dim, heads, head_dim
        make = qkv_factory or (lambda i, o: Linear(i, o, rng, bias=False))
        self.q = make(dim, heads * head_dim)
        self.k = make(dim, heads * head_dim)
        self.v = make(dim, heads * head_dim)
        self.o = Linear(heads * head_dim, dim, rng, bias=False)
        self.drop = Dropout(dropout)
        self.num_buckets = num_buckets
        self.max_distance = max_distance
        self.rel_bias = Parameter(rng.normal(0.0, 0.02, size=(num_buckets, heads))) if rel_bias else None
        self._bucket_cache = {}

    def _buckets(self, c: int) -> np.ndarray:
        b = self._bucket_cache.get(c)
        if b is None:
            pos = np.arange(c)
            b = relative_position_bucket(pos[None, :] - pos[:, None], self.num_buckets, self.max_distance)
            self._bucket_cache[c] = b
        return b

    def position_bias(self, c: int) -> Tensor:
        """(heads, C, C) additive bias looked up from the bucket table."""
        table = ops.getitem(self.rel_bias, self._buckets(c))  # C, C, heads
        return ops.transpose(table, (2, 0, 1))

    def attention_weights(self, x, use_rel_bias: bool = True) -> Tensor:
        q, k, _ = self._qkv(as_tensor(x))
        return self._weights(q, k, use_rel_bias)

    def _qkv(self, x: Tensor):
        b, c, d = x.shape
        if d != self.dim:
            raise ShapeError(f"attention: input dim {d} does not match model dim {self.dim}")

        def split(t):
            return ops.transpose(ops.reshape(t, (b, c, self.heads, self.head_dim)), (0, 2, 1, 3))

        return split(self.q(x)), split(self.k(x)), split(self.v(x))

    def _weights(self, q, k, use_rel_bias):
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        if use_rel_bias and self.rel_bias is not None:
            scores = ops.add(scores, self.position_bias(q.shape[2]))
        return ops.softmax(scores, axis=-1)

    def forward(self, x, use_rel_bias: bool = True) -> Tensor:
        x = as_tensor(x)
        b, c, _ = x.shape
        q, k, v = self._qkv(x)
        attn = self.drop(self._weights(q, k, use_rel_bias))
        ctx = ops.matmul(attn, v)  # B, h, C, dk
        ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, c, self.heads * self.head_dim))
        return self.o(ctx)


def mhsa_forward(layer: MultiHeadAttention, x, use_rel_bias: bool = True) -> Tensor:
    return layer(x, use_rel_bias=use_rel_bias)
