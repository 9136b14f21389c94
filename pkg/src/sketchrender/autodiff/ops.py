"""Differentiable primitives.

Images are laid out batch x channels x height x width.  ``conv2d`` uses the
cross-correlation convention (the kernel is not flipped), as do all filters in
this package.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, default_dtype, record

LEAKY_SLOPE = 0.2


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _scalar(value) -> np.ndarray:
    return np.asarray(value, dtype=default_dtype())


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        c = _scalar(b)
        a = as_tensor(a)
        return record("scale", (a,), a.data * c, lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    return record("mul", (a, b), a.data * b.data,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return record("sum", (x,), x.data.sum(dtype=x.data.dtype), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return record("mean", (x,), x.data.mean(dtype=x.data.dtype),
                  lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return record("matmul", (a, b), a.data @ b.data, lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), backward)


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return record("abs", (x,), np.abs(x.data), lambda g: (g * np.sign(x.data),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) evaluated without overflow."""
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))

    def backward(g):
        return (g * _sigmoid(d),)

    return record("softplus", (x,), out, backward)


def _sigmoid(d: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)


def activation(x: Tensor, kind: str) -> Tensor:
    d = x.data
    if kind == "leaky_relu":
        slope = _scalar(LEAKY_SLOPE)
        out = np.where(d > 0, d, d * slope)
        return record(kind, (x,), out, lambda g: (np.where(d > 0, g, g * slope),))
    if kind == "tanh":
        out = np.tanh(d)
        return record(kind, (x,), out, lambda g: (g * (1 - out * out),))
    if kind == "sigmoid":
        out = _sigmoid(d)
        return record(kind, (x,), out, lambda g: (g * out * (1 - out),))
    raise ValueError(f"unknown activation {kind!r}")


def leaky_relu(x: Tensor) -> Tensor:
    return activation(x, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def pixelnorm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each pixel's channel vector to unit mean square."""
    if x.ndim != 4:
        raise ValueError("pixelnorm expects a rank-4 tensor")
    d = x.data
    c = d.shape[1]
    inv = 1 / np.sqrt((d * d).mean(axis=1, keepdims=True) + _scalar(eps))
    out = d * inv

    def backward(g):
        # d out_i / d x_j = inv * delta_ij - x_i x_j inv^3 / C
        proj = (g * d).sum(axis=1, keepdims=True)
        return (g * inv - d * proj * inv ** 3 / c,)

    return record("pixelnorm", (x,), out, backward)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects rank-4 input and kernel")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"kernel expects {ci} input channels, input has {c}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : (ho - 1) * stride + 1 : stride,
                                                          : (wo - 1) * stride + 1 : stride]
    # cols: n, c, ho, wo, kh, kw
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += \
                    np.tensordot(w.data[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
        gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        return gx, gw

    return record("conv2d", (x, w), np.ascontiguousarray(out), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour replication doubling both spatial extents."""
    if x.ndim != 4:
        raise ValueError("upsample2x expects a rank-4 tensor")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape
    return record("upsample2x", (x,), out,
                  lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def downsample2x(x: Tensor) -> Tensor:
    """2x2 mean pooling."""
    if x.ndim != 4:
        raise ValueError("downsample2x expects a rank-4 tensor")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample2x needs even extents, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    quarter = _scalar(0.25)
    return record("downsample2x", (x,), out,
                  lambda g: ((g * quarter).repeat(2, axis=2).repeat(2, axis=3),))


def lerp(a: Tensor, b: Tensor, alpha: float) -> Tensor:
    """(1 - alpha) * a + alpha * b for a fixed scalar alpha."""
    wa, wb = _scalar(1.0 - alpha), _scalar(alpha)
    if a.shape != b.shape:
        raise ValueError(f"lerp shape mismatch: {a.shape} vs {b.shape}")
    return record("lerp", (a, b), a.data * wa + b.data * wb, lambda g: (g * wa, g * wb))
