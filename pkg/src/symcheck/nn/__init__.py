"""Minimal reverse-mode autodiff runtime used by both models.

Dense affine maps, pointwise nonlinearities, (masked) softmax, a handful of
reductions, Adam, and a binary checkpoint container.  Tensors are numpy
arrays of shape (rows, cols) or (batch, rows, cols); float64 is used in
gradient tests, float32 for training speed.
"""

from .tensor import (
    Tensor,
    no_grad,
    set_finite_checks,
    add,
    affine,
    bce_logits,
    concat_last,
    constant,
    exp,
    expand_batch,
    log,
    log_softmax,
    masked_log_softmax,
    masked_softmax,
    matmul,
    mean_all,
    mul,
    mul_const,
    narrow,
    reciprocal,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    sub,
    sum_axis,
    swap_last,
    xlogy,
)
from .optim import ParamStore, adam_step, glorot_uniform
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "no_grad", "set_finite_checks",
    "add", "affine", "bce_logits", "concat_last", "constant", "exp", "expand_batch",
    "log", "log_softmax", "masked_log_softmax", "masked_softmax", "matmul", "mean_all", "mul", "mul_const",
    "narrow", "reciprocal", "relu", "reshape", "sigmoid", "softmax",
    "softplus", "sqrt", "sub", "sum_axis", "swap_last", "xlogy",
    "ParamStore", "adam_step", "glorot_uniform",
    "load_checkpoint", "save_checkpoint",
]
