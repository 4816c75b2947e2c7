"""Differentiable numeric substrate: tensors, ops, optimizer, grad checker."""

from ddep.nn.gradcheck import grad_check
from ddep.nn.optim import OptimizerConfig, Parameter, ParamSet, adam_step, cosine_lr
from ddep.nn.ops import (
    add,
    concat,
    conv2d,
    dense,
    global_avg_pool,
    group_norm,
    matmul,
    mean_squared_error,
    relu,
    reshape,
    scale,
    softmax,
    softmax_cross_entropy,
    transpose,
    upsample_nearest2x,
)
from ddep.nn.tensor import Tensor, as_tensor

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "concat",
    "conv2d",
    "dense",
    "global_avg_pool",
    "group_norm",
    "matmul",
    "mean_squared_error",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "softmax_cross_entropy",
    "transpose",
    "upsample_nearest2x",
    "OptimizerConfig",
    "Parameter",
    "ParamSet",
    "adam_step",
    "cosine_lr",
    "grad_check",
]
