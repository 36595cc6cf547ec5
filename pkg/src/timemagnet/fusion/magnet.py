"""Graph-attention + mixture-of-experts fusion over modality nodes.

Nodes are modalities (M of them); each batch item carries one D_f vector per
node. One adjacency is built per batch from the batch-mean node embeddings
and shared by every fusion block.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor, as_tensor
from ..nn import Dropout, Linear, Module, ModuleList, Parameter, RMSNorm, SwiGLU
from ..nn.layers import rmsnorm_forward

log = logging.getLogger(__name__)

ATTN_FLOOR = 1e-9
_NORM_FLOOR = 1e-24


# -- adjacency --------------------------------------------------------------

@dataclass
class AdjacencySet:
    dynamic: Tensor
    learn: Tensor
    final: Tensor


def dynamic_adjacency(emb) -> Tensor:
    """(cos(E_i, E_j) + 1) / 2 over batch-mean node vectors, diagonal fixed at 1.

    ``emb`` is B×M×D (or M×D if already reduced). A zero-norm node gets cosine
    0 against every other node.
    """
    emb = as_tensor(emb)
    e = ops.mean(emb, axis=0) if emb.ndim == 3 else emb
    m = e.shape[0]
    sq = ops.sum(ops.mul(e, e), axis=-1, keepdims=True)
    if np.any(sq.data < _NORM_FLOOR):
        log.warning("dynamic_adjacency: zero-norm modality embedding; cosine treated as 0")
    nrm = ops.sqrt(ops.clip(sq, lo=_NORM_FLOOR))
    hat = ops.div(e, nrm)
    cos = ops.matmul(hat, ops.transpose(hat))
    cos = ops.mul(ops.add(cos, ops.transpose(cos)), 0.5)
    cos = ops.clip(cos, lo=-1.0, hi=1.0)
    eye = np.eye(m)
    a = ops.mul(ops.add(cos, 1.0), 0.5)
    return ops.add(ops.mul(a, 1.0 - eye), eye)


def final_adjacency(a_dynamic, w_adj) -> AdjacencySet:
    a_dynamic, w_adj = as_tensor(a_dynamic), as_tensor(w_adj)
    if a_dynamic.shape != w_adj.shape or a_dynamic.ndim != 2 or a_dynamic.shape[0] != a_dynamic.shape[1]:
        raise ShapeError(f"adjacency shapes must be matching M×M, got {a_dynamic.shape} and {w_adj.shape}")
    a_learn = ops.sigmoid(w_adj)
    final = ops.add(ops.mul(a_dynamic, a_learn), 0.5 * np.eye(a_dynamic.shape[0]))
    return AdjacencySet(a_dynamic, a_learn, final)


# -- graph attention --------------------------------------------------------

class GraphAttention(Module):
    """Multi-head GAT whose softmax scores are reweighted by ``A_final`` and renormalised."""

    def __init__(self, dim: int, heads: int, rng):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"gat: heads {heads} must divide dim {dim}")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.w = Linear(dim, dim, rng, bias=False)
        bound = math.sqrt(6.0 / (2 * self.head_dim))
        self.a_src = Parameter(rng.uniform(-bound, bound, size=(heads, self.head_dim)))
        self.a_dst = Parameter(rng.uniform(-bound, bound, size=(heads, self.head_dim)))
        self.bias = Parameter(np.zeros(dim))
        self.out = Linear(dim, dim, rng)

    def _heads(self, x: Tensor) -> Tensor:
        b, m, _ = x.shape
        wh = ops.reshape(self.w(x), (b, m, self.heads, self.head_dim))
        return ops.transpose(wh, (0, 2, 1, 3))  # B,H,M,dh

    def attention(self, x, a_final) -> Tensor:
        """Renormalised weights α'' of shape B×H×M×M (rows over neighbours j)."""
        return self._attention(self._heads(as_tensor(x)), as_tensor(a_final))

    def _attention(self, wh: Tensor, a_final: Tensor) -> Tensor:
        s_src = ops.sum(ops.mul(wh, ops.reshape(self.a_src, (1, self.heads, 1, self.head_dim))), axis=-1)
        s_dst = ops.sum(ops.mul(wh, ops.reshape(self.a_dst, (1, self.heads, 1, self.head_dim))), axis=-1)
        b, h, m = s_src.shape
        e = ops.leaky_relu(ops.add(ops.reshape(s_src, (b, h, m, 1)), ops.reshape(s_dst, (b, h, 1, m))), 0.2)
        alpha = ops.mul(ops.softmax(e, axis=-1), a_final)
        denom = ops.clip(ops.sum(alpha, axis=-1, keepdims=True), lo=ATTN_FLOOR)
        return ops.div(alpha, denom)

    def forward(self, x, a_final) -> Tensor:
        x = as_tensor(x)
        b, m, d = x.shape
        if d != self.dim:
            raise ShapeError(f"gat: node dim {d} does not match {self.dim}")
        wh = self._heads(x)
        att = self._attention(wh, as_tensor(a_final))
        agg = ops.transpose(ops.matmul(att, wh), (0, 2, 1, 3))  # B,M,H,dh
        agg = ops.add(ops.reshape(agg, (b, m, d)), self.bias)
        return self.out(ops.elu(agg))


def gat_forward(layer: GraphAttention, h, a_final) -> Tensor:
    return layer(h, a_final)


# -- mixture of experts -----------------------------------------------------

@dataclass
class RoutingResult:
    indices: np.ndarray  # N×k, int
    weights: Tensor  # N×k, softmax over the selected logits
    probs: Tensor  # N×E, full softmax before top-k

    @property
    def n_experts(self) -> int:
        return self.probs.shape[-1]

    def usage(self) -> np.ndarray:
        """Fraction of routing slots assigned to each expert."""
        counts = np.bincount(self.indices.reshape(-1), minlength=self.n_experts)
        return counts / self.indices.size


def top_k_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Largest-k per row; equal logits resolve to the lower expert index."""
    return np.argsort(-logits, axis=-1, kind="stable")[..., :k]


def moe_route(gate_logits, k: int) -> RoutingResult:
    gate_logits = as_tensor(gate_logits)
    e = gate_logits.shape[-1]
    if not 1 <= k <= e:
        raise ValueError(f"top-k must satisfy 1 <= k <= {e}, got {k}")
    flat = ops.reshape(gate_logits, (-1, e))
    n = flat.shape[0]
    idx = top_k_indices(flat.data, k)
    rows = np.repeat(np.arange(n), k).reshape(n, k)
    selected = ops.getitem(flat, (rows, idx))
    return RoutingResult(idx, ops.softmax(selected, axis=-1), ops.softmax(flat, axis=-1))


def load_balance_loss(routing) -> Tensor:
    """log(E) - H(p̄), with p̄ the mean pre-top-k gate distribution over routed items."""
    probs = routing.probs if isinstance(routing, RoutingResult) else as_tensor(routing)
    probs = ops.reshape(probs, (-1, probs.shape[-1]))
    if probs.shape[0] < 1:
        raise ValueError("load_balance_loss needs at least one routed item")
    e = probs.shape[-1]
    p_bar = ops.mean(probs, axis=0)
    entropy = ops.mul(ops.sum(ops.mul(p_bar, ops.log(ops.clip(p_bar, lo=1e-300)))), -1.0)
    return ops.sub(math.log(e), entropy)


class Expert(Module):
    """lin(D->2D)+GELU -> lin(2D->2D)+GELU, skip from hidden 1, RMSNorm, lin(2D->D)."""

    def __init__(self, dim: int, rng, eps: float = 1e-6):
        super().__init__()
        self.fc1 = Linear(dim, 2 * dim, rng)
        self.fc2 = Linear(2 * dim, 2 * dim, rng)
        self.norm = RMSNorm(2 * dim, eps)
        self.out = Linear(2 * dim, dim, rng)

    def forward(self, x):
        h1 = ops.gelu(self.fc1(x))
        h2 = ops.gelu(self.fc2(h1))
        return self.out(self.norm(ops.add(h1, h2)))


class MixtureOfExperts(Module):
    def __init__(self, dim: int, n_experts: int, top_k: int, rng, eps: float = 1e-6):
        super().__init__()
        if not 1 <= top_k <= n_experts:
            raise ValueError(f"top_k {top_k} must be in [1, {n_experts}]")
        self.dim, self.n_experts, self.top_k = dim, n_experts, top_k
        self.gate = Linear(dim, n_experts, rng, bias=False)
        self.experts = ModuleList([Expert(dim, rng, eps) for _ in range(n_experts)])

    def route(self, x) -> RoutingResult:
        return moe_route(self.gate(as_tensor(x)), self.top_k)

    def forward(self, x):
        """Returns (output with the input's shape, routing)."""
        x = as_tensor(x)
        shape = x.shape
        flat = ops.reshape(x, (-1, shape[-1]))
        n = flat.shape[0]
        routing = moe_route(self.gate(flat), self.top_k)
        out = None
        for e, expert in enumerate(self.experts):
            rows, slots = np.nonzero(routing.indices == e)
            if rows.size == 0:
                continue
            y = expert(ops.getitem(flat, rows))
            g = ops.getitem(routing.weights, (rows, slots))
            contrib = ops.index_add(n, rows, ops.mul(y, ops.reshape(g, (-1, 1))))
            out = contrib if out is None else ops.add(out, contrib)
        return ops.reshape(out, shape), routing

    def dense_forward(self, x):
        """Reference path: every expert on every item, masked by the routing."""
        x = as_tensor(x)
        shape = x.shape
        flat = ops.reshape(x, (-1, shape[-1]))
        n = flat.shape[0]
        routing = moe_route(self.gate(flat), self.top_k)
        out = Tensor(np.zeros((n, shape[-1])))
        for e, expert in enumerate(self.experts):
            onehot = np.zeros((n, self.top_k))
            r, s = np.nonzero(routing.indices == e)
            onehot[r, s] = 1.0
            coef = ops.sum(ops.mul(routing.weights, onehot), axis=-1)
            out = ops.add(out, ops.mul(expert(flat), ops.reshape(coef, (-1, 1))))
        return ops.reshape(out, shape), routing


def moe_forward(layer: MixtureOfExperts, x):
    return layer(x)


# -- blocks, pooling, head --------------------------------------------------

class FusionBlock(Module):
    """Pre-norm residual GAT -> MoE -> SwiGLU."""

    def __init__(self, dim: int, heads: int, n_experts: int, top_k: int, rng, eps: float = 1e-6):
        super().__init__()
        self.norm_gat = RMSNorm(dim, eps)
        self.gat = GraphAttention(dim, heads, rng)
        self.norm_moe = RMSNorm(dim, eps)
        self.moe = MixtureOfExperts(dim, n_experts, top_k, rng, eps)
        self.norm_ff = RMSNorm(dim, eps)
        self.ff = SwiGLU(dim, 2 * dim, rng)

    def forward(self, x, a_final):
        """Returns (x', balance loss, routing)."""
        x = as_tensor(x)
        x = ops.add(x, self.gat(self.norm_gat(x), a_final))
        y, routing = self.moe(self.norm_moe(x))
        x = ops.add(x, y)
        x = ops.add(x, self.ff(self.norm_ff(x)))
        return x, load_balance_loss(routing), routing


def fusion_block(block: FusionBlock, x, a_final):
    x, loss, _ = block(x, a_final)
    return x, loss


def attention_pool_weights(h) -> Tensor:
    """softmax over nodes of each node's feature mean: B×M."""
    return ops.softmax(ops.mean(as_tensor(h), axis=-1), axis=-1)


class FusionPool(Module):
    def __init__(self, dim: int, rng, eps: float = 1e-6):
        super().__init__()
        self.proj = Linear(dim, dim, rng)
        self.eps = eps
        self.gain = Parameter(np.ones(dim))

    def pooled(self, h) -> Tensor:
        h = as_tensor(h)
        w = attention_pool_weights(h)
        b, m = w.shape
        return ops.sum(ops.mul(h, ops.reshape(w, (b, m, 1))), axis=1)

    def forward(self, h) -> Tensor:
        return rmsnorm_forward(self.proj(self.pooled(h)), self.gain, self.eps)


def fusion_pool(pool: FusionPool, h) -> Tensor:
    return pool(h)


class Classifier(Module):
    """D -> D/2 -> D/4 -> n_classes with ReLU and dropout between layers."""

    def __init__(self, dim: int, n_classes: int, rng, dropout: float = 0.1):
        super().__init__()
        if dim < 4:
            raise ShapeError(f"classifier needs dim >= 4, got {dim}")
        self.fc1 = Linear(dim, dim // 2, rng)
        self.fc2 = Linear(dim // 2, dim // 4, rng)
        self.fc3 = Linear(dim // 4, n_classes, rng)
        self.fc3.weight.data *= 0.1  # near-uniform initial predictions, loss starts close to log(n_classes)
        self.drop = Dropout(dropout)

    def forward(self, x):
        x = self.drop(ops.relu(self.fc1(x)))
        x = self.drop(ops.relu(self.fc2(x)))
        return self.fc3(x)


class MagnetFusion(Module):
    def __init__(self, n_nodes: int, dim: int, blocks: int, heads: int, n_experts: int, top_k: int, rng,
                 eps: float = 1e-6):
        super().__init__()
        self.w_adj = Parameter(np.zeros((n_nodes, n_nodes)))
        self.blocks = ModuleList([FusionBlock(dim, heads, n_experts, top_k, rng, eps) for _ in range(blocks)])
        self.pool = FusionPool(dim, rng, eps)
        self.last_routing: Optional[list] = None
        self.last_adjacency: Optional[AdjacencySet] = None

    def forward(self, h):
        """B×M×D nodes -> (B×D fused vector, summed balance loss)."""
        h = as_tensor(h)
        adj = final_adjacency(dynamic_adjacency(h), self.w_adj)
        total = None
        routings = []
        for block in self.blocks:
            h, bal, routing = block(h, adj.final)
            routings.append(routing)
            total = bal if total is None else ops.add(total, bal)
        self.last_routing = routings
        self.last_adjacency = adj
        return self.pool(h), total


class ConcatFusion(Module):
    def __init__(self, n_nodes: int, dim: int, rng):
        super().__init__()
        self.proj = Linear(n_nodes * dim, dim, rng)

    def forward(self, h):
        h = as_tensor(h)
        b, m, d = h.shape
        return ops.gelu(self.proj(ops.reshape(h, (b, m * d)))), None


class AttentionFusion(Module):
    def __init__(self, dim: int, rng):
        super().__init__()
        self.score = Linear(dim, 1, rng)

    def forward(self, h):
        h = as_tensor(h)
        b, m, d = h.shape
        w = ops.softmax(ops.reshape(self.score(ops.tanh(h)), (b, m)), axis=-1)
        return ops.sum(ops.mul(h, ops.reshape(w, (b, m, 1))), axis=1), None

