"""Parameter containers built on the autodiff primitives."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Collects parameters from attributes, in attribute definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr


def _param(shape, fan_in: int, rng: np.random.Generator) -> Tensor:
    w = rng.standard_normal(shape) / np.sqrt(fan_in)
    return Tensor(w, requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        self.weight = _param((cout, cin, k, k), cin * k * k, rng)
        self.bias = Tensor(np.zeros((1, cout, 1, 1)), requires_grad=True)
        self._stride = stride
        self._padding = k // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self._stride, self._padding) + self.bias


class Dense(Module):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator):
        self.weight = _param((nin, nout), nin, rng)
        self.bias = Tensor(np.zeros((1, nout)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matmul(x, self.weight) + self.bias
