"""Finite-difference oracle shared by the autodiff unit tests and the acceptance suite.

Analytic gradients come from the float32 engine; the reference is a central
difference evaluated in float64 so that the oracle itself is not the noisy part.
"""

from __future__ import annotations

import numpy as np

from sketchrender import autodiff as ad
from sketchrender.autodiff import Recording, Tensor, precision

H = 1e-3


def rel_err(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(g) for g in analytic]).astype(np.float64)
    n = np.concatenate([np.ravel(g) for g in numeric]).astype(np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-8))


def analytic_grads(f, arrays):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Recording() as rec:
        out = f(*ts)
        grads = rec.backward(out, ts)
    return [grads[t.node_id] for t in ts]


def numeric_grads(f, arrays, h=H):
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    with precision(np.float64):
        def value():
            return f(*[Tensor(a) for a in arrays]).item()

        for a in arrays:
            g = np.zeros_like(a)
            flat, gflat = a.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = value()
                flat[i] = keep - h
                down = value()
                flat[i] = keep
                gflat[i] = (up - down) / (2 * h)
            out.append(g)
    return out


def check(f, arrays, h=H) -> float:
    return rel_err(analytic_grads(f, arrays), numeric_grads(f, arrays, h))


def away_from_zero(rng, shape, margin=0.1):
    """Samples whose magnitude is at least ``margin``, so kinks at 0 sit outside the FD stencil."""
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def weighted(out: Tensor, rng_seed: int) -> Tensor:
    """Reduce to a scalar with fixed random weights so linear ops still get non-constant gradients."""
    w = np.random.default_rng([rng_seed, 999]).standard_normal(out.shape)
    return ad.sum(ad.mul(out, Tensor(w)))


def _case(name, make, fn):
    return name, make, fn


# Each case: make(rng) -> list of input arrays, fn(*tensors) -> tensor (reduced with `weighted`)
PRIMITIVES = [
    _case("add", lambda r: [r.standard_normal((3, 4)), r.standard_normal((1, 4))], ad.add),
    _case("sub", lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 1))], ad.sub),
    _case("mul", lambda r: [r.standard_normal((2, 3, 2)), r.standard_normal((2, 3, 2))], ad.mul),
    _case("mul_scalar", lambda r: [r.standard_normal((5,))], lambda a: ad.mul(a, 1.7)),
    _case("div_scalar", lambda r: [r.standard_normal((5,))], lambda a: a / 3.0),
    _case("neg", lambda r: [r.standard_normal((4,))], lambda a: -a),
    _case("sum", lambda r: [r.standard_normal((3, 3))], lambda a: ad.mul(ad.sum(ad.mul(a, a)), 0.5)),
    _case("mean", lambda r: [r.standard_normal((3, 5))], lambda a: ad.mean(ad.mul(a, a))),
    _case("reshape", lambda r: [r.standard_normal((2, 6))], lambda a: ad.reshape(a, (3, 4))),
    _case("matmul", lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2))], ad.matmul),
    _case("concat", lambda r: [r.standard_normal((2, 1, 3, 3)), r.standard_normal((2, 2, 3, 3))],
          lambda a, b: ad.concat([a, b], axis=1)),
    _case("abs", lambda r: [away_from_zero(r, (4, 4))], ad.abs),
    _case("softplus", lambda r: [3 * r.standard_normal((4, 4))], ad.softplus),
    _case("leaky_relu", lambda r: [away_from_zero(r, (4, 4))], ad.leaky_relu),
    _case("tanh", lambda r: [r.standard_normal((4, 4))], ad.tanh),
    _case("sigmoid", lambda r: [2 * r.standard_normal((4, 4))], ad.sigmoid),
    _case("pixelnorm", lambda r: [r.standard_normal((2, 4, 3, 3))], ad.pixelnorm),
    _case("conv2d", lambda r: [r.standard_normal((2, 2, 5, 5)), r.standard_normal((3, 2, 3, 3))],
          lambda x, w: ad.conv2d(x, w, 1, 1)),
    _case("conv2d_stride2", lambda r: [r.standard_normal((1, 2, 6, 6)), r.standard_normal((2, 2, 4, 4))],
          lambda x, w: ad.conv2d(x, w, 2, 1)),
    _case("conv2d_valid", lambda r: [r.standard_normal((1, 1, 4, 5)), r.standard_normal((2, 1, 2, 3))],
          lambda x, w: ad.conv2d(x, w, 1, 0)),
    _case("upsample2x", lambda r: [r.standard_normal((1, 2, 3, 3))], ad.upsample2x),
    _case("downsample2x", lambda r: [r.standard_normal((1, 2, 4, 6))], ad.downsample2x),
    _case("lerp", lambda r: [r.standard_normal((2, 3)), r.standard_normal((2, 3))],
          lambda a, b: ad.lerp(a, b, 0.3)),
]


def check_primitive(case, seed: int) -> float:
    _, make, fn = case
    arrays = make(np.random.default_rng(seed))
    return check(lambda *ts: weighted(fn(*ts), seed), arrays)


# -- composite losses over module parameters ---------------------------------------

def jitter_biases(module, seed: int, scale: float = 0.1) -> None:
    """Give every bias a small random value, as after some training.

    Freshly initialized biases are exactly zero, which parks activations fed
    by exact-zero inputs (pooled binary sketches) right on the leaky ReLU kink
    where no finite difference agrees with either one-sided derivative.
    """
    rng = np.random.default_rng([seed, 55])
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data = rng.normal(0.0, scale, p.shape).astype(p.data.dtype)


def directional_check(loss_fn, params, seed: int, h: float = 1e-5) -> float:
    """Compare g . v against a float64 central difference along a random unit direction v.

    ``loss_fn()`` must rebuild the loss from the current ``p.data`` of ``params``.
    The step is small because a wider stencil along a direction touching every
    weight can straddle a leaky ReLU kink somewhere in the network.
    """
    rng = np.random.default_rng([seed, 77])
    with Recording() as rec:
        loss = loss_fn()
        grads = rec.backward(loss, params, allow_unused=True)
    g = [grads[p.node_id].astype(np.float64) for p in params]
    v = [rng.standard_normal(p.shape) for p in params]
    norm = np.sqrt(sum(float((d * d).sum()) for d in v))
    v = [d / norm for d in v]
    analytic = sum(float((gi * vi).sum()) for gi, vi in zip(g, v))

    saved = [p.data for p in params]
    try:
        with precision(np.float64):
            vals = []
            for sign in (1.0, -1.0):
                for p, base, d in zip(params, saved, v):
                    p.data = base.astype(np.float64) + sign * h * d
                vals.append(loss_fn().item())
    finally:
        for p, base in zip(params, saved):
            p.data = base
    numeric = (vals[0] - vals[1]) / (2 * h)
    gnorm = np.sqrt(sum(float((gi * gi).sum()) for gi in g))
    # scale by |g| rather than |g . v| so a direction nearly orthogonal to g is not penalized
    return abs(analytic - numeric) / max(gnorm, 1e-8)
