"""Dense tensors with a tape-based reverse-mode recorder.

Operations only record themselves while a :class:`Recording` is active on the
current thread and at least one input requires a gradient.  Outside a
recording every operation is a plain forward computation.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_local = threading.local()
_ids = itertools.count()


def default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are cast to (used by gradient checks)."""
    prev = default_dtype()
    _local.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _local.dtype = prev


def _active_recording() -> "Recording | None":
    stack = getattr(_local, "recordings", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=default_dtype())
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar; the primitives live in autodiff.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not a supported primitive")
        return ops.mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Recording:
    """Ordered log of executed primitives; also a context manager.

    ``with Recording() as rec: loss = f(x); grads = rec.backward(loss, [x])``
    """

    nodes: list[Node] = field(default_factory=list)
    _consumed: bool = False

    def __enter__(self) -> "Recording":
        stack = getattr(_local, "recordings", None)
        if stack is None:
            stack = _local.recordings = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.recordings.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def contains(self, tensor: Tensor) -> bool:
        return any(n.output is tensor for n in self.nodes)

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None,
                 allow_unused: bool = False) -> dict[int, np.ndarray]:
        """Propagate d(loss) back through the recording.

        Gradients are accumulated into ``.grad`` of every requested tensor
        (all leaf tensors with ``requires_grad`` when ``wrt`` is None) and
        returned keyed by ``node_id``.  A requested tensor absent from the
        recording is an error unless ``allow_unused``, in which case its
        gradient is zero.  A recording can be traversed once.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if not self.contains(loss):
            raise ValueError("loss was not produced inside this recording")
        if self._consumed:
            raise RuntimeError("recording has already been traversed")
        self._consumed = True

        produced = {n.output.node_id for n in self.nodes}
        if wrt is None:
            seen: dict[int, Tensor] = {}
            for n in self.nodes:
                for t in n.inputs:
                    if t.requires_grad and t.node_id not in produced:
                        seen.setdefault(t.node_id, t)
            targets = list(seen.values())
        else:
            targets = list(wrt)
            leaves = {t.node_id for n in self.nodes for t in n.inputs}
            for t in targets:
                if not allow_unused and t.node_id not in leaves and t.node_id not in produced:
                    raise ValueError(f"{t!r} does not appear in this recording")

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(node.output.node_id, None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise FloatingPointError(f"non-finite gradient in backward of {node.op}")
                if inp.node_id in grads:
                    grads[inp.node_id] = grads[inp.node_id] + gi
                else:
                    grads[inp.node_id] = gi

        out: dict[int, np.ndarray] = {}
        for t in targets:
            g = grads.get(t.node_id)
            if g is None:
                g = np.zeros_like(t.data)
            g = g.astype(t.data.dtype, copy=False)
            t.grad = g if t.grad is None else t.grad + g
            out[t.node_id] = g
        return out


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
           backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap a primitive's forward result and log it on the active recording."""
    if not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{op} produced NaN or Inf from finite inputs")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    rec = _active_recording()
    if rec is not None and needs_grad:
        rec.nodes.append(Node(op, tuple(inputs), out, backward))
    return out
