"""Float64 tensors, reverse-mode differentiation and the Adam optimizer."""

from .init import glorot_uniform, make_rng, ones, zeros
from .optim import AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    div,
    exp,
    layer_norm,
    matmul,
    mean,
    mul,
    power,
    relu,
    reshape,
    softmax,
    softmax_rows,
    square,
    sub,
    swapaxes,
    take,
    transpose,
    tsum,
)

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "broadcast_to",
    "concat",
    "div",
    "exp",
    "glorot_uniform",
    "layer_norm",
    "make_rng",
    "matmul",
    "mean",
    "mul",
    "ones",
    "power",
    "relu",
    "reshape",
    "softmax",
    "softmax_rows",
    "square",
    "sub",
    "swapaxes",
    "take",
    "transpose",
    "tsum",
    "zeros",
]
