from . import ops
from .gradcheck import GradCheckError, grad_check, grad_check_params
from .optim import AdamW, OptimizerState, adamw_step, clip_global_norm, global_norm, weighted_cross_entropy
from .rng import stream
from .tensor import ShapeError, Tape, Tensor, as_tensor, backward

__all__ = [
    "AdamW", "GradCheckError", "OptimizerState", "ShapeError", "Tape", "Tensor",
    "adamw_step", "as_tensor", "backward", "clip_global_norm", "global_norm",
    "grad_check", "grad_check_params", "ops", "stream", "weighted_cross_entropy",
]
