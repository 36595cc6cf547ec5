"""Full Time-MAGNET assembly: per-modality encoders, learnable modality
weights, per-modality projections, a fusion head and the classifier."""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.rng import stream
from ..autodiff.tensor import ShapeError, Tensor
from ..config import MODALITIES, TS_MODALITIES, RunConfig
from ..encoders import DartCNN, DartConfig, EncoderConfig, TSEncoder
from ..nn import Linear, Module, ModuleDict, Parameter
from .magnet import AttentionFusion, Classifier, ConcatFusion, MagnetFusion


def weight_modalities(embs: dict, weights: dict) -> dict:
    """Scale each modality embedding by its scalar weight."""
    out = {}
    for m, e in embs.items():
        if m not in weights:
            raise KeyError(f"no weight for modality {m!r}")
        out[m] = ops.mul(e, weights[m])
    return out


class TimeMagnet(Module):
    def __init__(self, cfg: RunConfig, rng=None):
        super().__init__()
        rng = rng if rng is not None else stream(cfg.seed, "init")
        mods = [m for m in MODALITIES if m in cfg.modalities]
        if not mods:
            raise ValueError("modality subset must be non-empty")
        self.cfg = cfg
        self.modalities = mods
        self.encoders = ModuleDict()
        enc_cfg = EncoderConfig.from_run(cfg)
        for m in mods:
            if m in TS_MODALITIES:
                if cfg.share_ts_encoder and "ts" in self.encoders:
                    continue
                key = "ts" if cfg.share_ts_encoder else m
                self.encoders[key] = TSEncoder(enc_cfg, rng)
            else:
                self.encoders[m] = DartCNN(DartConfig.from_run(cfg, m), rng)
        self.modality_weights = Parameter(np.ones(len(mods)))
        self.projections = ModuleDict()
        for m in mods:
            d_in = cfg.ts_dim if m in TS_MODALITIES else cfg.dart_emb
            self.projections[m] = Linear(d_in, cfg.fusion_dim, rng)
        n = len(mods)
        if cfg.fusion == "magnet":
            self.fusion = MagnetFusion(n, cfg.fusion_dim, cfg.fusion_blocks, cfg.gat_heads, cfg.moe_experts,
                                       cfg.moe_top_k, rng, cfg.rmsnorm_eps)
        elif cfg.fusion == "concat":
            self.fusion = ConcatFusion(n, cfg.fusion_dim, rng)
        else:
            self.fusion = AttentionFusion(cfg.fusion_dim, rng)
        self.classifier = Classifier(cfg.fusion_dim, cfg.n_classes, rng, cfg.classifier_dropout)

    def encoder_for(self, m: str) -> Module:
        if m in TS_MODALITIES and "ts" in self.encoders:
            return self.encoders["ts"]
        return self.encoders[m]

    def encode(self, batch: dict) -> dict:
        missing = [m for m in self.modalities if m not in batch]
        if missing:
            raise KeyError(f"batch is missing modality {missing[0]!r}")
        return {m: self.encoder_for(m)(Tensor(batch[m])) for m in self.modalities}

    def nodes(self, batch: dict) -> Tensor:
        """B×M×D_f node matrix after modality weighting and projection."""
        embs = self.encode(batch)
        weights = {m: ops.getitem(self.modality_weights, i) for i, m in enumerate(self.modalities)}
        weighted = weight_modalities(embs, weights)
        projected = [ops.gelu(self.projections[m](weighted[m])) for m in self.modalities]
        return ops.stack(projected, axis=1)

    def forward(self, batch: dict, return_fused: bool = False):
        h = self.nodes(batch)
        if h.shape[-1] != self.cfg.fusion_dim:
            raise ShapeError(f"node dim {h.shape[-1]} != fusion_dim {self.cfg.fusion_dim}")
        fused, moe_loss = self.fusion(h)
        if moe_loss is None:
            moe_loss = Tensor(0.0)
        logits = self.classifier(fused)
        if return_fused:
            return logits, moe_loss, fused
        return logits, moe_loss


def model_forward(model: TimeMagnet, batch: dict):
    return model(batch)


def build_model(cfg: RunConfig, seed=None) -> TimeMagnet:
    return TimeMagnet(cfg, stream(cfg.seed if seed is None else seed, "init"))
