"""Numpy kernels with reverse-mode gradients, layers, Adam, and a gradient checker."""

from .gradcheck import finite_diff_check
from .module import BatchNorm, Conv2d, LayerNorm, Linear, Module, MultiHeadAttention
from .ops import (
    add,
    attention,
    batchnorm,
    broadcast_to,
    concat,
    conv2d,
    gather_rows,
    layernorm,
    linear,
    matmul,
    mean,
    mul,
    multi_head_attention,
    relu,
    reshape,
    softmax_cross_entropy,
    sum_all,
    transpose,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor, no_grad, parameter

__all__ = [
    "Adam", "AdamState", "BatchNorm", "Conv2d", "LayerNorm", "Linear", "Module",
    "MultiHeadAttention", "Tensor", "adam_step", "add", "as_tensor", "attention",
    "batchnorm", "broadcast_to", "concat", "conv2d", "finite_diff_check", "gather_rows",
    "layernorm",
    "linear", "matmul", "mean", "mul", "multi_head_attention", "no_grad", "parameter", "relu",
    "reshape", "softmax_cross_entropy", "sum_all", "transpose",
]
