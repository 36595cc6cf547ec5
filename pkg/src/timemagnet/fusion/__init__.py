from .magnet import (
    AdjacencySet,
    AttentionFusion,
    Classifier,
    ConcatFusion,
    Expert,
    FusionBlock,
    FusionPool,
    GraphAttention,
    MagnetFusion,
    MixtureOfExperts,
    RoutingResult,
    attention_pool_weights,
    dynamic_adjacency,
    final_adjacency,
    fusion_block,
    fusion_pool,
    gat_forward,
    load_balance_loss,
    moe_forward,
    moe_route,
    top_k_indices,
)
from .model import TimeMagnet, build_model, model_forward, weight_modalities
