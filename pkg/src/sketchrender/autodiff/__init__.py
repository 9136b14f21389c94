"""Minimal float32 tensor engine with reverse-mode differentiation and Adam."""

from .nn import Conv2d, Dense, Module
from .ops import (
    abs,
    activation,
    add,
    concat,
    conv2d,
    downsample2x,
    leaky_relu,
    lerp,
    matmul,
    mean,
    mul,
    pixelnorm,
    reshape,
    sigmoid,
    softplus,
    sub,
    sum,
    tanh,
    upsample2x,
)
from .optim import AdamState, adam_step
from .tensor import Recording, Tensor, default_dtype, precision

__all__ = [
    "AdamState", "Conv2d", "Dense", "Module", "Recording", "Tensor",
    "abs", "activation", "adam_step", "add", "concat", "conv2d", "default_dtype",
    "downsample2x", "leaky_relu", "lerp", "matmul", "mean", "mul", "pixelnorm",
    "precision", "reshape", "sigmoid", "softplus", "sub", "sum", "tanh", "upsample2x",
]
