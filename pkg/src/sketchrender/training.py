"""Two-stage training: progressive sketch GAN, then sketch-to-image rendering.

The two adversarial games share no parameters, so they are optimized one
after the other by default (``schedule = joint`` interleaves their steps).
All randomness comes from counter-keyed streams ``default_rng([seed, stream,
step])``, which is what makes checkpoint/resume bit-exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .autodiff import AdamState, Module, Recording, Tensor, adam_step, mul, softplus
from .config import TrainConfig
from .dataset import ImageDataset, ManifestEntry, to_uint8, write_binary_png, write_manifest, write_png
from .metrics import MetricReport, auc, seg_confusion
from .progressive import (
    ProgressiveDiscriminator,
    ProgressiveGenerator,
    ResolutionSchedule,
    grow,
    set_alpha,
    sketch_gan_step,
)
from .render import PatchDiscriminator, UNetRenderer, render_train_step
from .sketch import extract_sketch

log = logging.getLogger(__name__)

STREAM_SKETCH_DATA = 1
STREAM_LATENT = 2
STREAM_RENDER_DATA = 3
STREAM_GENERATE = 4
STREAM_SEG = 5


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def sketch_pyramid(sketches: np.ndarray, max_level: int) -> dict[int, np.ndarray]:
    """Full-resolution {-1,+1} drafts -> drafts at every level.

    Each step halves by 2x2 mean pooling and re-binarizes at 0, i.e. a
    coarse pixel is on when at least half its fine pixels are.
    """
    cur = np.asarray(sketches, dtype=np.float32)
    levels = {max_level: cur}
    for k in range(max_level - 1, 0, -1):
        n, c, h, w = cur.shape
        pooled = cur.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        cur = np.where(pooled >= 0, 1.0, -1.0).astype(np.float32)
        levels[k] = cur
    return levels


def extract_corpus_sketches(images: np.ndarray, config: TrainConfig) -> np.ndarray:
    """(N, C, R, R) images in [-1, 1] -> (N, 1, R, R) drafts in {-1, +1}."""
    params = config.sketch_params
    drafts = [extract_sketch(img, params).as_signed() for img in images]
    return np.stack(drafts)[:, None]


def _sketch_opt(module: Module, lr: float, config: TrainConfig) -> AdamState:
    return AdamState.for_params(module.parameters(), lr, beta1=config.gs_beta1, beta2=config.gs_beta2)


@dataclass
class SketchStage:
    gen: ProgressiveGenerator
    disc: ProgressiveDiscriminator
    opt_g: AdamState
    opt_d: AdamState
    schedule: ResolutionSchedule
    images_seen: int = 0
    step: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)

    @classmethod
    def fresh(cls, config: TrainConfig) -> "SketchStage":
        gen = ProgressiveGenerator(config.latent_dim, config.max_level, config.seed,
                                   config.trainable_code, config.gs_base_width)
        disc = ProgressiveDiscriminator(config.max_level, config.seed, config.gs_base_width)
        return cls(gen, disc, _sketch_opt(gen, config.lr_gs, config), _sketch_opt(disc, config.lr_ds, config),
                   ResolutionSchedule(config.max_level, config.images_per_level, config.fade_fraction))

    @property
    def done(self) -> bool:
        return self.gen.level == self.schedule.max_level and self.images_seen >= self.schedule.images_per_level

    def advance(self, pyramid: dict[int, np.ndarray], config: TrainConfig) -> dict[str, float]:
        """Run one training step, growing first when the current level's budget is spent."""
        sched = self.schedule
        if self.images_seen >= sched.images_per_level:
            set_alpha(self.gen, self.disc, 1.0)
            grow(self.gen, self.disc, sched)
            # optimizer moments restart with each new level
            self.opt_g = _sketch_opt(self.gen, config.lr_gs, config)
            self.opt_d = _sketch_opt(self.disc, config.lr_ds, config)
            self.images_seen = 0
        set_alpha(self.gen, self.disc, sched.alpha(self.gen.level, self.images_seen))
        real_all = pyramid[self.gen.level]
        bs = config.batch_size
        idx = _rng(config.seed, STREAM_SKETCH_DATA, self.step).integers(len(real_all), size=bs)
        z = _rng(config.seed, STREAM_LATENT, self.step).standard_normal((bs, config.latent_dim)).astype(np.float32)
        losses = sketch_gan_step(self.gen, self.disc, real_all[idx], z, self.opt_g, self.opt_d)
        self.history.append((losses["loss_D"], losses["loss_G"]))
        self.step += 1
        self.images_seen += bs
        return losses


@dataclass
class RenderStage:
    gen: UNetRenderer
    disc: PatchDiscriminator
    opt_g: AdamState
    opt_d: AdamState
    total_steps: int
    step: int = 0
    history: list[tuple[float, float, float, float]] = field(default_factory=list)

    @classmethod
    def fresh(cls, config: TrainConfig) -> "RenderStage":
        gen = UNetRenderer(1, 3, config.unet_depth, config.unet_width, config.seed)
        disc = PatchDiscriminator(4, config.patch_blocks, config.unet_width, config.seed)
        return cls(gen, disc, AdamState.for_params(gen.parameters(), config.lr_gp),
                   AdamState.for_params(disc.parameters(), config.lr_dp), config.render_steps)

    @property
    def done(self) -> bool:
        return self.step >= self.total_steps

    def advance(self, images: np.ndarray, sketches: np.ndarray, config: TrainConfig) -> dict[str, float]:
        idx = _rng(config.seed, STREAM_RENDER_DATA, self.step).integers(len(images), size=config.batch_size)
        losses = render_train_step(images[idx], sketches[idx], self.gen, self.disc, self.opt_g, self.opt_d,
                                   config.lam)
        self.history.append((losses["L_adv_D"], losses["L_adv_G"], losses["L1"], losses["total_G"]))
        self.step += 1
        return losses


@dataclass
class TrainState:
    config: TrainConfig
    sketch: SketchStage
    render: RenderStage

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        return cls(config, SketchStage.fresh(config), RenderStage.fresh(config))

    @property
    def done(self) -> bool:
        return self.sketch.done and self.render.done

    @property
    def steps(self) -> int:
        return self.sketch.step + self.render.step


def train_sketch_stage(sketches: np.ndarray, config: TrainConfig, stage: SketchStage | None = None,
                       max_steps: int | None = None) -> SketchStage:
    """Progressive loop over levels: fade-in, then stabilize, each within its image budget.

    ``max_steps`` stops early (counting global steps) so a run can be checkpointed and resumed.
    """
    if len(sketches) == 0:
        raise ValueError("empty sketch dataset")
    stage = stage or SketchStage.fresh(config)
    pyramid = sketch_pyramid(sketches, config.max_level)
    while not stage.done and (max_steps is None or stage.step < max_steps):
        stage.advance(pyramid, config)
    return stage


def train_render_stage(images: np.ndarray, sketches: np.ndarray, config: TrainConfig,
                       stage: RenderStage | None = None, max_steps: int | None = None) -> RenderStage:
    if len(images) == 0 or len(images) != len(sketches):
        raise ValueError("need a non-empty set of (image, sketch) pairs")
    stage = stage or RenderStage.fresh(config)
    while not stage.done and (max_steps is None or stage.step < max_steps):
        stage.advance(images, sketches, config)
    return stage


def full_train(images: np.ndarray, config: TrainConfig, state: TrainState | None = None,
               sketches: np.ndarray | None = None, max_steps: int | None = None,
               on_step=None) -> TrainState:
    """Extract drafts, train the sketch stage, then the render stage.

    ``max_steps`` bounds the combined step count of this call's state, for
    interrupt/resume.  ``on_step(state)`` runs after every step.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.shape[-1] != config.resolution:
        raise ValueError(f"images are {images.shape[-1]}px, config expects {config.resolution}px")
    if sketches is None:
        sketches = extract_corpus_sketches(images, config)
    state = state or TrainState.fresh(config)
    pyramid = sketch_pyramid(sketches, config.max_level)

    def budget_left():
        return max_steps is None or state.steps < max_steps

    while not state.done and budget_left():
        if config.schedule == "joint":
            if not state.sketch.done:
                state.sketch.advance(pyramid, config)
            if not state.render.done and budget_left():
                state.render.advance(images, sketches, config)
        elif not state.sketch.done:
            state.sketch.advance(pyramid, config)
        else:
            state.render.advance(images, sketches, config)
        if on_step is not None:
            on_step(state)
    return state


# -- checkpoints ---------------------------------------------------------------

def _opt_arrays(prefix: str, module: Module, opt: AdamState) -> dict[str, np.ndarray]:
    names = [n for n, _ in module.named_parameters()]
    out = {f"{prefix}.t": np.array([opt.t], dtype=np.uint32)}
    out.update({f"{prefix}.m.{n}": m for n, m in zip(names, opt.m)})
    out.update({f"{prefix}.v.{n}": v for n, v in zip(names, opt.v)})
    return out


def _load_opt(prefix: str, module: Module, opt: AdamState, arrays: dict[str, np.ndarray]) -> None:
    opt.t = int(arrays[f"{prefix}.t"][0])
    for i, (n, _) in enumerate(module.named_parameters()):
        opt.m[i][...] = arrays[f"{prefix}.m.{n}"]
        opt.v[i][...] = arrays[f"{prefix}.v.{n}"]


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    s, r = state.sketch, state.render
    arrays: dict[str, np.ndarray] = {
        "meta.config": ckpt.text_array(state.config.to_text()),
        # rng streams are keyed by (seed, stream, step): these counters are their full state
        "meta.progress": np.array([state.config.seed, s.gen.level, s.images_seen, s.step, r.step], dtype=np.uint32),
        "meta.alpha": np.array([s.gen.alpha], dtype=np.float32),
    }
    for prefix, module in (("gs", s.gen), ("ds", s.disc), ("gp", r.gen), ("dp", r.disc)):
        arrays.update({f"{prefix}.{n}": p.data for n, p in module.named_parameters()})
    arrays.update(_opt_arrays("opt.gs", s.gen, s.opt_g))
    arrays.update(_opt_arrays("opt.ds", s.disc, s.opt_d))
    arrays.update(_opt_arrays("opt.gp", r.gen, r.opt_g))
    arrays.update(_opt_arrays("opt.dp", r.disc, r.opt_d))
    arrays["hist.sketch"] = np.asarray(s.history, dtype=np.float32).reshape(-1, 2)
    arrays["hist.render"] = np.asarray(r.history, dtype=np.float32).reshape(-1, 4)
    return arrays


def state_from_arrays(arrays: dict[str, np.ndarray]) -> TrainState:
    config = TrainConfig.from_text(ckpt.array_text(arrays["meta.config"]))
    state = TrainState.fresh(config)
    _, level, seen, sstep, rstep = (int(v) for v in arrays["meta.progress"])
    s, r = state.sketch, state.render
    while s.gen.level < level:
        s.gen.grow()
        s.disc.grow()
    set_alpha(s.gen, s.disc, float(arrays["meta.alpha"][0]))
    s.opt_g = _sketch_opt(s.gen, config.lr_gs, config)
    s.opt_d = _sketch_opt(s.disc, config.lr_ds, config)
    for prefix, module in (("gs", s.gen), ("ds", s.disc), ("gp", r.gen), ("dp", r.disc)):
        module.load_state_dict({n: arrays[f"{prefix}.{n}"] for n, _ in module.named_parameters()})
    _load_opt("opt.gs", s.gen, s.opt_g, arrays)
    _load_opt("opt.ds", s.disc, s.opt_d, arrays)
    _load_opt("opt.gp", r.gen, r.opt_g, arrays)
    _load_opt("opt.dp", r.disc, r.opt_d, arrays)
    s.images_seen, s.step, r.step = seen, sstep, rstep
    s.history = [tuple(float(x) for x in row) for row in arrays["hist.sketch"]]
    r.history = [tuple(float(x) for x in row) for row in arrays["hist.render"]]
    return state


def save_checkpoint(path, state: TrainState) -> None:
    ckpt.save(path, state_arrays(state))


def load_checkpoint(path) -> TrainState:
    return state_from_arrays(ckpt.load(path))


# -- synthesis -----------------------------------------------------------------

def synthesize(gen: ProgressiveGenerator, unet: UNetRenderer, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """End-to-end G_P(G_S(z * l)); returns (sketches (n,1,R,R), images (n,3,R,R)), both in [-1, 1]."""
    sketch = gen(z)
    return sketch.data, unet(sketch).data


def generate_pairs(gen: ProgressiveGenerator, unet: UNetRenderer, n: int, seed: int,
                   out_dir=None, batch: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """n synthetic (binary sketch label, image) pairs; written as PNGs + manifest when out_dir is set."""
    if gen is None or unet is None:
        raise ValueError("generate_pairs needs trained sketch and render networks")
    if gen.level != gen.max_level or gen.alpha < 1.0:
        raise ValueError("sketch generator has not finished growing")
    r = gen.resolution
    labels = np.zeros((n, r, r), dtype=np.uint8)
    images = np.zeros((n, 3, r, r), dtype=np.float32)
    for b, start in enumerate(range(0, n, batch)):
        m = min(batch, n - start)
        z = _rng(seed, STREAM_GENERATE, b).standard_normal((m, gen.latent_dim)).astype(np.float32)
        sk, im = synthesize(gen, unet, z)
        labels[start : start + m] = (sk[:, 0] > 0).astype(np.uint8)
        images[start : start + m] = im
    if out_dir is not None:
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        entries = [ManifestEntry(f"images/{i:05d}.png", f"sketches/{i:05d}.png", "") for i in range(n)]
        for e, im, lab in zip(entries, images, labels):
            write_png(root / e.image, to_uint8(im))
            write_binary_png(root / e.sketch, lab)
        write_manifest(root / "manifest.tsv", entries)
    return labels, images


# -- segmentation application ----------------------------------------------------

@dataclass(frozen=True)
class SegParams:
    depth: int = 3
    base_width: int = 16
    lr: float = 0.001
    batch_size: int = 4
    pretrain_steps: int = 150
    finetune_steps: int = 60
    threshold: float = 0.5


def _bce_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    y = labels.astype(np.float32)
    return (mul(softplus(-logits), y) + mul(softplus(logits), 1 - y)).mean()


def _seg_steps(net: UNetRenderer, images: np.ndarray, labels: np.ndarray, steps: int, params: SegParams,
               seed: int, stream: int, opt: AdamState) -> None:
    plist = net.parameters()
    for step in range(steps):
        idx = _rng(seed, stream, step).integers(len(images), size=params.batch_size)
        net.zero_grad()
        with Recording() as rec:
            loss = _bce_logits(net.logits(images[idx]), labels[idx][:, None])
            grads = rec.backward(loss, plist, allow_unused=True)
        adam_step(plist, [grads[p.node_id] for p in plist], opt)


def _seg_eval(net: UNetRenderer, images: np.ndarray, masks: np.ndarray, threshold: float) -> dict:
    probs = net(images).data[:, 0].astype(np.float64)
    row = seg_confusion(probs > threshold, masks)
    out = {"SEN": row["SEN"], "ACC": row["ACC"], "AUC": auc(probs, masks)}
    return out


def augmentation_pretrain(pair_images: np.ndarray, pair_labels: np.ndarray,
                          train_images: np.ndarray, train_masks: np.ndarray,
                          test_images: np.ndarray, test_masks: np.ndarray,
                          seed: int = 0, params: SegParams = SegParams(), pretrain: bool = True,
                          config: TrainConfig | None = None) -> MetricReport:
    """Train a U-Net segmenter from scratch and from synthetic-pair pretraining; report both rows.

    Both arms start from the same initial weights and see identical fine-tuning batches.
    """
    for name, arr in (("pairs", pair_images), ("train", train_images), ("test", test_images)):
        if len(arr) == 0:
            raise ValueError(f"empty {name} set")
    in_ch = train_images.shape[1]
    rows = {}
    for arm in ("with", "without"):
        net = UNetRenderer(in_ch, 1, params.depth, params.base_width, seed, head="sigmoid")
        if arm == "with" and pretrain:
            opt = AdamState.for_params(net.parameters(), params.lr)
            _seg_steps(net, pair_images, pair_labels, params.pretrain_steps, params, seed, STREAM_SEG, opt)
        opt = AdamState.for_params(net.parameters(), params.lr)
        _seg_steps(net, train_images, train_masks, params.finetune_steps, params, seed, STREAM_SEG + 100, opt)
        rows[arm] = _seg_eval(net, test_images, test_masks, params.threshold)
    cfg = config.as_dict() if config is not None else {}
    cfg.update({f"seg_{k}": str(v) for k, v in vars(params).items()}, seg_seed=str(seed))
    return MetricReport(["synthetic-pairs", "toy-vessels"], {}, "", cfg, rows)
