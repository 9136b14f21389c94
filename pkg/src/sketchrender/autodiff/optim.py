from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params], **kw)

    def reset(self) -> None:
        self.t = 0
        for a in self.m + self.v:
            a[...] = 0


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place.

    A missing gradient is treated as zero.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer moments differ in length")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** t
    bc2 = 1 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {p.name or p.node_id}")
        dt = p.data.dtype
        m *= dt.type(b1)
        m += dt.type(1 - b1) * g
        v *= dt.type(b2)
        v += dt.type(1 - b2) * (g * g)
        mhat = m / dt.type(bc1)
        vhat = v / dt.type(bc2)
        p.data -= dt.type(state.lr) * mhat / (np.sqrt(vhat) + dt.type(state.eps))
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"Adam produced non-finite values in {p.name or p.node_id}")
