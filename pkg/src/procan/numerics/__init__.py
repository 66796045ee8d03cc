"""Tensor math, reverse-mode autodiff, Adam and the finite-difference oracle."""

from .gradcheck import finite_diff_grad, relative_error
from .ops import (
    BatchNormState,
    activation,
    batchnorm2d,
    bce_loss,
    conv2d,
    dropout,
    global_avg_pool,
    matmul,
    relu,
    sigmoid,
    softmax_rows,
    stable_sigmoid,
)
from .optim import AdamState, adam_step
from .tensor import Tensor, as_tensor, backward, parameter, topological_order, where

__all__ = [
    "AdamState",
    "BatchNormState",
    "Tensor",
    "activation",
    "adam_step",
    "as_tensor",
    "backward",
    "batchnorm2d",
    "bce_loss",
    "conv2d",
    "dropout",
    "finite_diff_grad",
    "global_avg_pool",
    "matmul",
    "parameter",
    "relative_error",
    "relu",
    "sigmoid",
    "softmax_rows",
    "stable_sigmoid",
    "topological_order",
    "where",
]
