"""Minimal n-dimensional tensor engine with reverse-mode autodiff."""

from .engine import DEFAULT_DTYPE, ShapeError, Tape, Tensor, active_tape
from .gradcheck import check_gradients
from .init import ones_param, recurrent_uniform, xavier_uniform, zeros_param
from .ops import (add, clamp, concat, concat_lastdim, conv1d, depthwise_conv1d,
                  div, embedding_lookup, exp, gru_cell, layernorm, log, matmul,
                  mean_all, mean_over_axis, neg, relu, reshape, sigmoid,
                  slice_axis, softmax_lastdim, sqrt, sub, sum_all,
                  sum_over_axis, swapaxes, swish, tanh, mul)
from .serialize import ContainerError, load_tensors, save_tensors

__all__ = [
    "DEFAULT_DTYPE", "ShapeError", "Tape", "Tensor", "active_tape",
    "check_gradients", "ones_param", "recurrent_uniform", "xavier_uniform",
    "zeros_param", "add", "clamp", "concat", "concat_lastdim", "conv1d",
    "depthwise_conv1d", "div", "embedding_lookup", "exp", "gru_cell",
    "layernorm", "log", "matmul", "mean_all", "mean_over_axis", "mul", "neg",
    "relu", "reshape", "sigmoid", "slice_axis", "softmax_lastdim", "sqrt",
    "sub", "sum_all", "sum_over_axis", "swapaxes", "swish", "tanh",
    "ContainerError", "load_tensors", "save_tensors",
]
