from .attention import MultiHeadAttention, mhsa_forward, relative_position_bucket
from .layers import (
    BatchNorm2d,
    Conv2d,
    Dropout,
    Linear,
    RMSNorm,
    SwiGLU,
    batchnorm2d_forward,
    dropout_forward,
    linear_forward,
    pool2d,
    rmsnorm_forward,
    swiglu_forward,
)
from .module import Module, ModuleDict, ModuleList, Parameter, kaiming_uniform
from .recurrent import BiRecurrent, RecurrentCell, RecurrentStack, recurrent_forward

__all__ = [
    "BatchNorm2d", "BiRecurrent", "Conv2d", "Dropout", "Linear", "Module", "ModuleDict",
    "ModuleList", "MultiHeadAttention", "Parameter", "RMSNorm", "RecurrentCell",
    "RecurrentStack", "SwiGLU", "batchnorm2d_forward", "dropout_forward", "kaiming_uniform",
    "linear_forward", "mhsa_forward", "pool2d", "recurrent_forward", "relative_position_bucket",
    "rmsnorm_forward", "swiglu_forward",
]
