"""Minimal reverse-mode differentiation engine (float64, numpy-backed)."""
from . import ops
from .check import directional_check, gradcheck, relative_error
from .ops import (
    EPS,
    add_positional,
    binary_cross_entropy,
    concat,
    conv1d,
    cross_entropy,
    embedding,
    gelu,
    layer_norm,
    linear,
    masked_mean_rows,
    masked_softmax,
    matmul,
    mse,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    where_rows,
)
from .optim import Adam
from .tensor import DTYPE, NonFiniteError, Tape, Tensor, backward, no_grad

__all__ = [
    "Adam", "DTYPE", "EPS", "NonFiniteError", "Tape", "Tensor", "add_positional", "backward",
    "binary_cross_entropy", "concat", "conv1d", "cross_entropy", "directional_check",
    "embedding", "gelu", "gradcheck", "layer_norm", "linear", "masked_mean_rows",
    "masked_softmax", "matmul", "mse", "no_grad", "ops", "relative_error", "sigmoid",
    "softmax", "softmax_cross_entropy", "where_rows",
]
