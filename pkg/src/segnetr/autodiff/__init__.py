"""Minimal reverse-mode autodiff over dense numpy tensors."""

from .adam import Adam, AdamState
from .functional import (
    batch_norm,
    bilinear_upsample2x,
    conv2d,
    cross_entropy,
    gelu,
    global_avg_pool,
    layer_norm,
    linear,
    log_softmax,
    relu,
    sigmoid,
    silu,
    softmax,
)
from .gradcheck import GradCheckResult, grad_check
from .module import Module, ModuleList, Parameter
from .tensor import (
    Tensor,
    backward,
    concat,
    exp,
    gather,
    log,
    matmul,
    mean,
    neg,
    no_grad,
    pad,
    reshape,
    slice_,
    sqrt,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckResult",
    "Module",
    "ModuleList",
    "Parameter",
    "Tensor",
    "backward",
    "batch_norm",
    "bilinear_upsample2x",
    "concat",
    "conv2d",
    "cross_entropy",
    "exp",
    "gather",
    "gelu",
    "global_avg_pool",
    "grad_check",
    "layer_norm",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "neg",
    "no_grad",
    "pad",
    "relu",
    "reshape",
    "sigmoid",
    "silu",
    "slice_",
    "softmax",
    "sqrt",
    "sum_",
    "tanh",
    "transpose",
]
