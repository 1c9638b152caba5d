"""Differentiable compute core: tensors, layers, losses, optimizer."""

from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    exp,
    gather_flat,
    im2col,
    log,
    maxpool2,
    pad2d,
    relu,
    sqrt,
    stack,
)
from .functional import (
    CropSpec,
    crop_resize,
    cross_entropy,
    kl_div,
    log_softmax,
    mse,
    per_sample_cross_entropy,
    softmax_np,
)
from .layers import (
    BNStats,
    ForwardResult,
    LayerSpec,
    Model,
    convnet3,
    forward,
)
from .optim import AdamW, OptimizerState, adamw_step
from . import checkpoint

__all__ = [
    "AdamW",
    "BNStats",
    "CropSpec",
    "ForwardResult",
    "GraphError",
    "LayerSpec",
    "Model",
    "NonFiniteError",
    "OptimizerState",
    "Tensor",
    "adamw_step",
    "checkpoint",
    "convnet3",
    "crop_resize",
    "cross_entropy",
    "exp",
    "forward",
    "gather_flat",
    "im2col",
    "kl_div",
    "log",
    "log_softmax",
    "maxpool2",
    "mse",
    "pad2d",
    "per_sample_cross_entropy",
    "relu",
    "softmax_np",
    "sqrt",
    "stack",
]
