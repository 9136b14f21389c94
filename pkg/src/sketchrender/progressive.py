"""Progressively grown sketch generator and discriminator.

Level ``k`` (1-based) works at ``2**(k+1)`` pixels square.  The generator is
a stack of blocks, block 0 mapping the latent input to 4x4 and every later
block doubling resolution; each level has its own 1-channel tanh head.  The
discriminator mirrors it.  While a new level fades in, outputs are blended
with the previous level's path using the shared coefficient ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamState,
    Conv2d,
    Dense,
    Module,
    Recording,
    Tensor,
    adam_step,
    downsample2x,
    leaky_relu,
    lerp,
    pixelnorm,
    softplus,
    tanh,
    upsample2x,
)


def resolution(level: int) -> int:
    return 2 ** (level + 1)


def level_width(level: int, base: int = 64, floor: int = 16) -> int:
    return max(floor, base >> (level - 1))


@dataclass(frozen=True)
class ResolutionSchedule:
    max_level: int = 4
    images_per_level: int = 800
    fade_fraction: float = 0.5

    def __post_init__(self):
        if not 1 <= self.max_level <= 8:
            raise ValueError("max_level must be within 1..8")
        if self.images_per_level <= 0:
            raise ValueError("images_per_level must be positive")
        if not 0 < self.fade_fraction < 1:
            raise ValueError("fade_fraction must lie in (0, 1)")

    @property
    def resolutions(self) -> list[int]:
        return [resolution(k) for k in range(1, self.max_level + 1)]

    def alpha(self, level: int, images_seen: int) -> float:
        """Fade coefficient after ``images_seen`` images at ``level``; level 1 never fades."""
        if level == 1:
            return 1.0
        span = self.fade_fraction * self.images_per_level
        return float(min(1.0, images_seen / span))


@dataclass
class LatentSample:
    z: np.ndarray  # (n, latent_dim)
    l: np.ndarray  # (latent_dim,)

    def combined(self) -> np.ndarray:
        return self.z * self.l


def sample_latent(rng: np.random.Generator, latent_dim: int, n: int = 1) -> LatentSample:
    z = rng.standard_normal((n, latent_dim)).astype(np.float32)
    return LatentSample(z=z, l=np.ones(latent_dim, dtype=np.float32))


def fade_blend(low: Tensor, high: Tensor, alpha: float) -> Tensor:
    """(1 - alpha) * upsample2x(low) + alpha * high."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    up = upsample2x(low)
    if up.shape != high.shape:
        raise ValueError(f"cannot blend {low.shape} (upsampled) with {high.shape}")
    return lerp(up, high, alpha)


class _GenBlock(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, cout, 3, rng)
        self.conv2 = Conv2d(cout, cout, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = upsample2x(x)
        x = pixelnorm(leaky_relu(self.conv1(x)))
        return pixelnorm(leaky_relu(self.conv2(x)))


class _GenStem(Module):
    def __init__(self, latent_dim: int, width: int, rng: np.random.Generator):
        self.dense = Dense(latent_dim, width * 16, rng)
        self.conv = Conv2d(width, width, 3, rng)
        self._width = width

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        x = pixelnorm(x.reshape(n, x.shape[1], 1, 1)).reshape(n, x.shape[1])
        x = self.dense(x).reshape(n, self._width, 4, 4)
        x = pixelnorm(leaky_relu(x))
        return pixelnorm(leaky_relu(self.conv(x)))


class ProgressiveGenerator(Module):
    def __init__(self, latent_dim: int = 32, max_level: int = 4, seed: int = 0,
                 trainable_code: bool = False, base_width: int = 64):
        self.latent_dim = latent_dim
        self.max_level = max_level
        self.seed = seed
        self.base_width = base_width
        self.level = 1
        self.alpha = 1.0
        self.code = Tensor(np.ones(latent_dim), requires_grad=trainable_code)
        rng = self._init_rng(1)
        w = level_width(1, base_width)
        self.blocks: list[Module] = [_GenStem(latent_dim, w, rng)]
        self.heads: list[Conv2d] = [Conv2d(w, 1, 1, rng)]

    def _init_rng(self, level: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, 11, level])

    @property
    def resolution(self) -> int:
        return resolution(self.level)

    def grow(self) -> None:
        if self.level >= self.max_level:
            raise ValueError(f"cannot grow past level {self.max_level}")
        self.level += 1
        self.alpha = 0.0
        rng = self._init_rng(self.level)
        cin = level_width(self.level - 1, self.base_width)
        cout = level_width(self.level, self.base_width)
        self.blocks.append(_GenBlock(cin, cout, rng))
        self.heads.append(Conv2d(cout, 1, 1, rng))

    def __call__(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"latent must be (n, {self.latent_dim}), got {z.shape}")
        h = self.blocks[0](z * self.code)
        prev = h
        for block in self.blocks[1 : self.level]:
            prev = h
            h = block(h)
        high = tanh(self.heads[self.level - 1](h))
        if self.level == 1 or self.alpha >= 1.0:
            return high
        low = tanh(self.heads[self.level - 2](prev))
        return fade_blend(low, high, self.alpha)


def synthesize_sketch(gen: ProgressiveGenerator, latent: LatentSample) -> Tensor:
    if latent.z.shape[-1] != gen.latent_dim or latent.l.shape[-1] != gen.latent_dim:
        raise ValueError("latent dimension does not match the generator")
    z = latent.z if gen.code.requires_grad else latent.combined()
    return gen(np.atleast_2d(z))


class _DiscBlock(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, cin, 3, rng)
        self.conv2 = Conv2d(cin, cout, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = leaky_relu(self.conv1(x))
        x = leaky_relu(self.conv2(x))
        return downsample2x(x)


class _DiscHead(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        self.conv = Conv2d(width, width, 3, rng)
        self.dense1 = Dense(width * 16, width, rng)
        self.dense2 = Dense(width, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        x = leaky_relu(self.conv(x)).reshape(n, -1)
        return self.dense2(leaky_relu(self.dense1(x)))


class ProgressiveDiscriminator(Module):
    """Returns logits; ``probability`` applies the sigmoid."""

    def __init__(self, max_level: int = 4, seed: int = 0, base_width: int = 64):
        self.max_level = max_level
        self.seed = seed
        self.base_width = base_width
        self.level = 1
        self.alpha = 1.0
        rng = self._init_rng(1)
        w = level_width(1, base_width)
        self.blocks: list[Module] = [_DiscHead(w, rng)]
        self.from_sketch: list[Conv2d] = [Conv2d(1, w, 1, rng)]

    def _init_rng(self, level: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, 13, level])

    @property
    def resolution(self) -> int:
        return resolution(self.level)

    def grow(self) -> None:
        if self.level >= self.max_level:
            raise ValueError(f"cannot grow past level {self.max_level}")
        self.level += 1
        self.alpha = 0.0
        rng = self._init_rng(self.level)
        w = level_width(self.level, self.base_width)
        self.blocks.append(_DiscBlock(w, level_width(self.level - 1, self.base_width), rng))
        self.from_sketch.append(Conv2d(1, w, 1, rng))

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        r = self.resolution
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (r, r):
            raise ValueError(f"discriminator at level {self.level} expects (n, 1, {r}, {r}), got {x.shape}")
        k = self.level
        h = leaky_relu(self.from_sketch[k - 1](x))
        if k > 1:
            h = self.blocks[k - 1](h)
            if self.alpha < 1.0:
                low = leaky_relu(self.from_sketch[k - 2](downsample2x(x)))
                h = lerp(low, h, self.alpha)
        for block in reversed(self.blocks[1 : k - 1]):
            h = block(h)
        return self.blocks[0](h)

    def probability(self, x) -> np.ndarray:
        logits = self(x).data.astype(np.float64)
        return 1.0 / (1.0 + np.exp(-logits))


def grow(gen: ProgressiveGenerator, disc: ProgressiveDiscriminator, schedule: ResolutionSchedule) -> None:
    if gen.level != disc.level:
        raise ValueError("generator and discriminator are at different levels")
    if gen.level >= schedule.max_level:
        raise ValueError(f"schedule ends at level {schedule.max_level}")
    if gen.alpha < 1.0 or disc.alpha < 1.0:
        raise ValueError("current fade-in has not completed")
    gen.grow()
    disc.grow()


def set_alpha(gen: ProgressiveGenerator, disc: ProgressiveDiscriminator, alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    gen.alpha = disc.alpha = float(alpha)


def discriminator_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    # -log D(real) - log(1 - D(fake)) written in terms of logits
    return softplus(-real_logits).mean() + softplus(fake_logits).mean()


def generator_loss(fake_logits: Tensor) -> Tensor:
    # non-saturating: -log D(fake)
    return softplus(-fake_logits).mean()


def discriminator_half_step(gen, disc, real: np.ndarray, z: np.ndarray, opt_d: AdamState) -> float:
    gen.zero_grad()
    disc.zero_grad()
    fake = Tensor(gen(z).data)
    params = disc.parameters()
    with Recording() as rec:
        loss = discriminator_loss(disc(real), disc(fake))
        grads = rec.backward(loss, params, allow_unused=True)
    adam_step(params, [grads[p.node_id] for p in params], opt_d)
    return loss.item()


def generator_half_step(gen, disc, z: np.ndarray, opt_g: AdamState) -> float:
    gen.zero_grad()
    disc.zero_grad()
    params = gen.parameters()
    with Recording() as rec:
        loss = generator_loss(disc(gen(z)))
        grads = rec.backward(loss, params, allow_unused=True)
    adam_step(params, [grads[p.node_id] for p in params], opt_g)
    return loss.item()


def sketch_gan_step(gen: ProgressiveGenerator, disc: ProgressiveDiscriminator, real_sketches: np.ndarray,
                    z: np.ndarray, opt_g: AdamState, opt_d: AdamState) -> dict[str, float]:
    """One discriminator update followed by one generator update on the same latents."""
    real = np.asarray(real_sketches, dtype=np.float32)
    r = gen.resolution
    if real.ndim != 4 or real.shape[1:] != (1, r, r):
        raise ValueError(f"real sketches must be (n, 1, {r}, {r}) at level {gen.level}, got {real.shape}")
    loss_d = discriminator_half_step(gen, disc, real, z, opt_d)
    loss_g = generator_half_step(gen, disc, z, opt_g)
    return {"loss_D": loss_d, "loss_G": loss_g}
