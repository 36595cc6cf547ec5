from .dart_cnn import DartCNN, DartConfig, DualAttention, dart_forward, dart_param_count, dual_attention
from .ts_encoder import (
    EncoderConfig,
    LoraLinear,
    TSEncoder,
    encoder_forward,
    lora_forward,
    lora_projection_counts,
    patchify,
    pool_head,
    sinusoidal_encoding,
    trainable_param_report,
)
