"""Sketch-to-image rendering: U-Net generator and conditional patch discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamState,
    Conv2d,
    Module,
    Recording,
    Tensor,
    abs,
    activation,
    adam_step,
    concat,
    leaky_relu,
    softplus,
    upsample2x,
)


@dataclass
class RenderPair:
    x: np.ndarray  # (3, R, R) in [-1, 1]
    y: np.ndarray  # (1, R, R) in {-1, +1}

    def __post_init__(self):
        if self.x.ndim != 3 or self.y.ndim != 3 or self.x.shape[0] != 3 or self.y.shape[0] != 1:
            raise ValueError("RenderPair needs x as (3, R, R) and y as (1, R, R)")
        if self.x.shape[1:] != self.y.shape[1:]:
            raise ValueError("image and sketch extents differ")


class UNetRenderer(Module):
    """Encoder of stride-2 convs, decoder of upsample + conv, concatenating skips.

    The last decoder stage concatenates the network input itself, so every
    encoder resolution including the full one feeds the output.
    """

    def __init__(self, in_channels: int = 1, out_channels: int = 3, depth: int = 4, base_width: int = 32,
                 seed: int = 0, head: str = "tanh"):
        if head not in ("tanh", "sigmoid", "linear"):
            raise ValueError(f"unknown head {head!r}")
        rng = np.random.default_rng([seed, 17])
        self.depth = depth
        self._head = head
        widths = [base_width * 2 ** i for i in range(depth)]
        self.encoder: list[Conv2d] = []
        cin = in_channels
        for w in widths:
            self.encoder.append(Conv2d(cin, w, 4, rng, stride=2, padding=1))
            cin = w
        self.decoder: list[Conv2d] = []
        skip_widths = [in_channels] + widths[:-1]
        for i, skip_w in enumerate(reversed(skip_widths)):
            cout = out_channels if i == depth - 1 else skip_w
            self.decoder.append(Conv2d(cin + skip_w, cout, 3, rng))
            cin = cout

    def logits(self, y: Tensor, skip_scale: dict[int, float] | None = None) -> Tensor:
        y = y if isinstance(y, Tensor) else Tensor(y)
        r = y.shape[-1]
        if y.shape[-2] % 2 ** self.depth or r % 2 ** self.depth:
            raise ValueError(f"input extents {y.shape[-2:]} not divisible by 2**{self.depth}")
        skips = [y]
        h = y
        for conv in self.encoder:
            h = leaky_relu(conv(h))
            skips.append(h)
        skips.pop()
        for i, conv in enumerate(self.decoder):
            level = len(skips) - 1
            s = skips.pop()
            if skip_scale and level in skip_scale:
                s = s * skip_scale[level]
            h = conv(concat([upsample2x(h), s], axis=1))
            if i < self.depth - 1:
                h = leaky_relu(h)
        return h

    def __call__(self, y, skip_scale: dict[int, float] | None = None) -> Tensor:
        out = self.logits(y, skip_scale)
        return out if self._head == "linear" else activation(out, self._head)


def render(unet: UNetRenderer, sketch) -> Tensor:
    return unet(sketch)


class PatchDiscriminator(Module):
    """Stride-2 4x4 conv blocks then a 1x1 logit head.

    For input extent R the decision grid is R / 2**n_blocks per side and each
    cell sees a (3 * 2**n_blocks - 2)-pixel window (22 pixels for 3 blocks).
    """

    def __init__(self, in_channels: int = 4, n_blocks: int = 3, base_width: int = 32, seed: int = 0):
        rng = np.random.default_rng([seed, 19])
        self.blocks: list[Conv2d] = []
        cin = in_channels
        for i in range(n_blocks):
            w = base_width * 2 ** i
            self.blocks.append(Conv2d(cin, w, 4, rng, stride=2, padding=1))
            cin = w
        self.head = Conv2d(cin, 1, 1, rng)
        self.n_blocks = n_blocks

    @staticmethod
    def grid_size(extent: int, n_blocks: int = 3) -> int:
        for _ in range(n_blocks):
            extent = (extent + 2 - 4) // 2 + 1
        return extent

    @staticmethod
    def receptive_field(n_blocks: int = 3) -> int:
        rf = 1
        for _ in range(n_blocks):
            rf = (rf - 1) * 2 + 4
        return rf

    def __call__(self, image, sketch) -> Tensor:
        image = image if isinstance(image, Tensor) else Tensor(image)
        sketch = sketch if isinstance(sketch, Tensor) else Tensor(sketch)
        h = concat([image, sketch], axis=1)
        for conv in self.blocks:
            h = leaky_relu(conv(h))
        return self.head(h)

    def probability(self, image, sketch) -> np.ndarray:
        logits = self(image, sketch).data.astype(np.float64)
        return 1.0 / (1.0 + np.exp(-logits))


def _adv_d(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    return softplus(-real_logits).mean() + softplus(fake_logits).mean()


def l1_term(fake: Tensor, x, lam: float) -> Tensor:
    return abs(fake - x).mean() * lam


def render_losses(x: np.ndarray, y: np.ndarray, gen: UNetRenderer, disc: PatchDiscriminator,
                  lam: float = 100.0) -> dict[str, Tensor]:
    """All loss terms for a batch of pairs; x is (n, 3, R, R), y is (n, 1, R, R)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    fake = gen(y)
    l1 = l1_term(fake, x, lam)
    adv_g = softplus(-disc(fake, y)).mean()
    adv_d = _adv_d(disc(x, y), disc(Tensor(fake.data), y))
    return {"L_adv_D": adv_d, "L_adv_G": adv_g, "L1": l1, "total_G": adv_g + l1}


def render_train_step(x: np.ndarray, y: np.ndarray, gen: UNetRenderer, disc: PatchDiscriminator,
                      opt_g: AdamState, opt_d: AdamState, lam: float = 100.0) -> dict[str, float]:
    """Discriminator Adam update, then generator update on adversarial + lambda * L1."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)

    gen.zero_grad()
    disc.zero_grad()
    fake = Tensor(gen(y).data)
    d_params = disc.parameters()
    with Recording() as rec:
        loss_d = _adv_d(disc(x, y), disc(fake, y))
        grads = rec.backward(loss_d, d_params, allow_unused=True)
    adam_step(d_params, [grads[p.node_id] for p in d_params], opt_d)

    gen.zero_grad()
    disc.zero_grad()
    g_params = gen.parameters()
    with Recording() as rec:
        out = gen(y)
        adv = softplus(-disc(out, y)).mean()
        l1 = l1_term(out, x, lam)
        total = adv + l1
        grads = rec.backward(total, g_params, allow_unused=True)
    adam_step(g_params, [grads[p.node_id] for p in g_params], opt_g)
    return {"L_adv_D": loss_d.item(), "L_adv_G": adv.item(), "L1": l1.item(), "total_G": total.item()}
