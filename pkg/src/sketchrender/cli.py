"""Command line entry point: ``sketchrender <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import report as figures
from .config import TrainConfig
from .dataset import (
    load_dataset,
    make_toy_corpus,
    read_png,
    write_binary_png,
)
from .metrics import EXTRACTORS, SwdParams, evaluate_sets
from .sketch import SketchParams, extract_sketch
from .training import (
    SegParams,
    augmentation_pretrain,
    full_train,
    generate_pairs,
    load_checkpoint,
    save_checkpoint,
    synthesize,
)

log = logging.getLogger("sketchrender")


def cmd_sketch_extract(args) -> int:
    params = SketchParams(args.sigma, args.ksize, args.thresh, args.radius)
    src, out = Path(args.inp), Path(args.out)
    files = sorted(src.glob("*.png"), key=lambda p: p.name)
    if not files:
        raise SystemExit(f"no PNG files in {src}")
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for f in files:
        draft = extract_sketch(read_png(f), params, source=f.name)
        write_binary_png(out / f.name, draft.mask)
        lines.append(f"{f}\t{out / f.name}\n")
    (out / "manifest.tsv").write_text("".join(lines))
    print(f"wrote {len(files)} sketches to {out}")
    return 0


def cmd_make_toy(args) -> int:
    ds = make_toy_corpus(args.n, args.res, args.seed, args.out)
    print(f"wrote {len(ds)} images and masks to {args.out}")
    return 0


def _write_train_log(path: Path, state) -> None:
    rows = ["stage\tstep\tloss_D\tloss_G\tL1\ttotal_G"]
    rows += [f"sketch\t{i}\t{d!r}\t{g!r}\t\t" for i, (d, g) in enumerate(state.sketch.history)]
    rows += [f"render\t{i}\t{d!r}\t{g!r}\t{l1!r}\t{t!r}" for i, (d, g, l1, t) in enumerate(state.render.history)]
    path.write_text("\n".join(rows) + "\n")


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    state = load_checkpoint(args.resume) if args.resume else None
    data = load_dataset(config.data_dir, config.resolution)
    ckpt_path = out / "checkpoint.skrg"

    def on_step(st):
        if config.checkpoint_every and st.steps % config.checkpoint_every == 0:
            save_checkpoint(ckpt_path, st)

    t0 = time.time()
    state = full_train(data.images, config, state, max_steps=args.max_steps, on_step=on_step)
    save_checkpoint(ckpt_path, state)
    _write_train_log(out / "train_log.tsv", state)
    figures.loss_curves(state.sketch.history, state.render.history, out / "loss_curves.png")
    if state.done:
        z = np.random.default_rng([config.seed, 99]).standard_normal((8, config.latent_dim)).astype(np.float32)
        sk, im = synthesize(state.sketch.gen, state.render.gen, z)
        figures.sample_grid(sk, im, out / "samples.png")
    print(f"{'finished' if state.done else 'paused'} after {state.steps} steps in {time.time() - t0:.1f}s; "
          f"checkpoint {ckpt_path}")
    return 0


def cmd_generate(args) -> int:
    state = load_checkpoint(args.ckpt)
    labels, images = generate_pairs(state.sketch.gen, state.render.gen, args.n, args.seed, args.out)
    figures.sample_grid(labels.astype(np.float32)[:, None] * 2 - 1, images, Path(args.out) / "samples.png")
    print(f"wrote {args.n} pairs to {args.out}")
    return 0


def cmd_augment_pretrain(args) -> int:
    pairs = load_dataset(args.pairs, args.res)
    if pairs.sketches is None:
        raise SystemExit(f"{args.pairs} has no sketch column in its manifest")
    train = load_dataset(args.train, args.res)
    test = load_dataset(args.test, args.res)
    if train.masks is None or test.masks is None:
        raise SystemExit("train and test sets need a mask column in their manifests")
    params = SegParams(pretrain_steps=args.pretrain_steps, finetune_steps=args.finetune_steps)
    rep = augmentation_pretrain(pairs.images, pairs.sketches, train.images, train.masks, test.images, test.masks,
                                seed=args.seed, params=params)
    rep.dataset_ids = [str(args.pairs), str(args.train), str(args.test)]
    paths = figures.write_report(rep, args.out, "segmentation", figure="segmentation")
    print(rep.to_text())
    print(f"report: {paths['text']}")
    return 0


def cmd_metrics(args) -> int:
    real = load_dataset(args.real, args.res)
    fake = load_dataset(args.fake, args.res)
    extractor = EXTRACTORS[args.extractor]()
    swd_params = SwdParams(min_resolution=min(16, args.res), seed=args.seed)
    config = {"real": str(args.real), "fake": str(args.fake), "res": str(args.res), "seed": str(args.seed),
              "pairs": str(args.pairs), "extractor": args.extractor}
    rep, _ = evaluate_sets(real.images, fake.images, (str(args.real), str(args.fake)), extractor, swd_params,
                           args.pairs, args.seed, config)
    paths = figures.write_report(rep, args.out, "report", figure="metrics")
    print(rep.to_text())
    print(f"report: {paths['text']}, {paths['tsv']}, {paths['figure']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sketchrender", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sketch-extract", help="binary sketch drafts for a PNG directory")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--ksize", type=int, default=5)
    s.add_argument("--thresh", type=float, default=0.25)
    s.add_argument("--radius", type=int, default=1)
    s.set_defaults(func=cmd_sketch_extract)

    s = sub.add_parser("make-toy", help="procedural vessel corpus with masks")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_toy)

    s = sub.add_parser("train", help="run both training stages from a key = value config")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--max-steps", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="synthetic (sketch, image) pairs from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("augment-pretrain", help="segmentation with and without synthetic-pair pretraining")
    s.add_argument("--pairs", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pretrain-steps", type=int, default=SegParams.pretrain_steps)
    s.add_argument("--finetune-steps", type=int, default=SegParams.finetune_steps)
    s.add_argument("--out", default="seg_report")
    s.set_defaults(func=cmd_augment_pretrain)

    s = sub.add_parser("metrics", help="SWD / MS-SSIM / Frechet distance between two PNG sets")
    s.add_argument("--real", required=True)
    s.add_argument("--fake", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pairs", type=int, default=50)
    s.add_argument("--extractor", default="random-conv-64", choices=sorted(EXTRACTORS))
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
