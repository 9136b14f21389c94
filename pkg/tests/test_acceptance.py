"""End-to-end acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -m acceptance -s``.  Criterion 5 trains the full
pipeline at 32x32 on one thread; the trained state is shared with 6 and 7.
"""

import itertools
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from gradcheck import PRIMITIVES, check_primitive, directional_check, jitter_biases
from oracles import (
    auc_pairs,
    box_blur3,
    decode,
    dense_gaussian,
    ms_ssim_oracle,
    natural_image,
    set_dilate,
    set_erode,
    set_open_close,
)
from sketchrender.autodiff import AdamState, Tensor, upsample2x
from sketchrender.config import TrainConfig
from sketchrender.dataset import make_toy_corpus
from sketchrender.metrics import (
    MetricReport,
    MsSsimParams,
    SwdParams,
    auc,
    evaluate_sets,
    frechet_distance,
    ms_ssim,
    sliced_wasserstein,
    swd,
)
from sketchrender.progressive import (
    ProgressiveDiscriminator,
    ProgressiveGenerator,
    ResolutionSchedule,
    discriminator_loss,
    generator_loss,
    grow,
    set_alpha,
    sketch_gan_step,
)
from sketchrender.render import PatchDiscriminator, UNetRenderer, render_losses
from sketchrender.sketch import dilate, erode, gaussian_lowpass, open_then_close, sobel_magnitude
from sketchrender.training import (
    augmentation_pretrain,
    full_train,
    generate_pairs,
    load_checkpoint,
    save_checkpoint,
)

pytestmark = pytest.mark.acceptance

TOL_GRAD = 1e-3
SEEDS = range(20)


# -- 1: gradients ----------------------------------------------------------------------

def _sketch_gan_losses(seed):
    rng = np.random.default_rng(seed)
    gen = ProgressiveGenerator(8, 3, seed, base_width=16)
    disc = ProgressiveDiscriminator(3, seed, 16)
    gen.grow()
    disc.grow()
    set_alpha(gen, disc, 0.5)
    jitter_biases(gen, seed)
    jitter_biases(disc, seed + 1)
    real = Tensor(np.where(rng.random((2, 1, 8, 8)) < 0.5, 1.0, -1.0))
    z = Tensor(rng.standard_normal((2, 8)))
    params = gen.parameters() + disc.parameters()
    return (
        directional_check(lambda: discriminator_loss(disc(real), disc(gen(z))), params, seed),
        directional_check(lambda: generator_loss(disc(gen(z))), params, seed),
    )


def _render_losses(seed):
    rng = np.random.default_rng(seed)
    unet = UNetRenderer(1, 3, 2, 4, seed)
    disc = PatchDiscriminator(4, 2, 4, seed)
    jitter_biases(unet, seed)
    jitter_biases(disc, seed + 1)
    x = rng.uniform(-1, 1, (2, 3, 16, 16))
    y = np.where(rng.random((2, 1, 16, 16)) < 0.5, 1.0, -1.0)
    # the D loss sees a detached fake, so it is checked against D's parameters only
    return (
        directional_check(lambda: render_losses(x, y, unet, disc, 100.0)["total_G"],
                          unet.parameters() + disc.parameters(), seed),
        directional_check(lambda: render_losses(x, y, unet, disc, 100.0)["L_adv_D"], disc.parameters(), seed),
    )


def test_criterion_1_gradient_suite(criterion):
    with criterion(1, "gradients vs central differences") as info:
        t0 = time.perf_counter()
        worst = {}
        for case in PRIMITIVES:
            worst[case[0]] = max(check_primitive(case, s) for s in SEEDS)
        for seed in SEEDS:
            for name, err in zip(("sketch_D", "sketch_G", "render_G", "render_D"),
                                 _sketch_gan_losses(seed) + _render_losses(seed)):
                worst[name] = max(worst.get(name, 0.0), err)
        elapsed = time.perf_counter() - t0
        name = max(worst, key=worst.get)
        info.update(cases=len(worst), seeds=len(SEEDS), worst=f"{name}:{worst[name]:.2e}", seconds=elapsed)
        assert worst[name] < TOL_GRAD, worst
        assert elapsed < 60


# -- 2: sketch extraction oracles ----------------------------------------------------------

def test_criterion_2_sketch_oracles(criterion):
    with criterion(2, "gaussian, exhaustive 4x4 morphology, sobel step") as info:
        rng = np.random.default_rng(0)
        gauss_err = 0.0
        for sigma, ksize in ((0.8, 3), (1.0, 5), (1.5, 7), (2.0, 9)):
            img = rng.random((16, 13))
            gauss_err = max(gauss_err, np.abs(gaussian_lowpass(img, sigma, ksize)
                                              - dense_gaussian(img, sigma, ksize)).max())
        info["gauss_err"] = gauss_err
        assert gauss_err <= 1e-5

        codes = np.arange(2 ** 16, dtype=np.int64)
        imgs = np.stack([decode(c) for c in codes])
        weights = 1 << np.arange(16, dtype=np.int64)

        def enc(stack):
            return stack.reshape(len(stack), 16).astype(np.int64) @ weights

        mismatches = 0
        for r in (1, 2):
            mismatches += int((enc(erode(imgs, r)) != set_erode(codes, 4, 4, r)).sum())
            mismatches += int((enc(dilate(imgs, r)) != set_dilate(codes, 4, 4, r)).sum())
            mismatches += int((enc(open_then_close(imgs, r)) != set_open_close(codes, 4, 4, r)).sum())
        info["images"] = len(codes)
        info["morph_mismatches"] = mismatches
        assert mismatches == 0

        step = np.zeros((8, 8))
        step[:, 4:] = 1.0
        mag = sobel_magnitude(step)
        info["sobel_edge"] = float(mag[4, 4])
        assert np.all(mag[:, 3:5] == 4.0)


# -- 3: metric oracles ---------------------------------------------------------------------

def _crafted_pairs():
    a = natural_image(64, 1)
    b = natural_image(64, 2)
    rng = np.random.default_rng(3)
    color = np.stack([natural_image(48, s) for s in (4, 5, 6)])
    return [
        ("blur", a, box_blur3(a)),
        ("noise", a, np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)),
        ("contrast", a, 0.5 + 0.6 * (a - 0.5)),
        ("brightness", a, np.clip(a + 0.1, 0, 1)),
        ("shift", a, np.roll(a, 2, axis=1)),
        ("invert", a, 1 - a),
        ("unrelated", a, b),
        ("quantized", a, np.round(a * 8) / 8),
        ("color_noise", color, np.clip(color + 0.04 * rng.standard_normal(color.shape), 0, 1)),
        ("color_blur", color, np.stack([box_blur3(c) for c in color])),
    ]


def test_criterion_3_metric_oracles(criterion):
    with criterion(3, "ms-ssim, swd, frechet, auc oracles") as info:
        worst = 0.0
        for name, x, y in _crafted_pairs():
            p = MsSsimParams.for_extent(x.shape[-1])
            assert ms_ssim(x, x, p) == pytest.approx(1.0, abs=1e-6), name
            worst = max(worst, abs(ms_ssim(x, y, p) - ms_ssim_oracle(x, y, scales=p.scales)))
        info["msssim_err"] = worst
        assert worst <= 1e-6

        rng = np.random.default_rng(0)
        imgs = rng.uniform(-1, 1, (4, 3, 32, 32))
        params = SwdParams(min_resolution=16, patches_per_image=16, n_projections=32, seed=9)
        assert swd(imgs, imgs.copy(), params)["mean"] == 0.0
        one = np.array([[1.0]])
        assert sliced_wasserstein([[0.0]], [[1.0]], one) == 1.0
        # sorted matching (0,1) (2,1) (5,7): (1 + 1 + 2) / 3
        assert sliced_wasserstein([[0.0], [2.0], [5.0]], [[7.0], [1.0], [1.0]], one) == pytest.approx(4 / 3)
        assert sliced_wasserstein([[3.0], [3.0]], [[3.0], [3.0]], one) == 0.0

        fd = frechet_distance([0.0], [[1.0]], [3.0], [[1.0]])
        info["fd_gap3"] = fd
        assert fd == pytest.approx(9.0, abs=1e-6)
        for _ in range(5):
            ma, mb = rng.standard_normal(4), rng.standard_normal(4)
            va, vb = rng.uniform(0.1, 2, 4), rng.uniform(0.1, 2, 4)
            closed = ((ma - mb) ** 2).sum() + ((np.sqrt(va) - np.sqrt(vb)) ** 2).sum()
            assert frechet_distance(ma, np.diag(va), mb, np.diag(vb)) == pytest.approx(closed, abs=1e-6)

        checked = 0
        for n in range(2, 9):
            scores = np.round(rng.random(n), 1)  # coarse rounding forces ties
            for labels in itertools.product((0, 1), repeat=n):
                if 0 < sum(labels) < n:
                    assert auc(scores, labels) == pytest.approx(auc_pairs(scores, labels), abs=1e-12)
                    checked += 1
        info["auc_labelings"] = checked


# -- 4: progressive invariants ---------------------------------------------------------------

def test_criterion_4_progressive_invariants(criterion):
    with criterion(4, "progressive schedule K=4") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(4)
        gen = ProgressiveGenerator(16, 4, seed=4, base_width=32)
        disc = ProgressiveDiscriminator(4, seed=4, base_width=32)
        sched = ResolutionSchedule(4)
        opt = lambda m: AdamState.for_params(m.parameters(), 1e-3, beta1=0.0, beta2=0.99)  # noqa: E731
        z = rng.standard_normal((6, 16)).astype(np.float32)
        jumps, fade_err, bound = [], 0.0, 0.0
        for level in range(1, 5):
            if level > 1:
                before = gen(z).data
                grow(gen, disc, sched)
                assert gen.alpha == 0.0
                at0 = gen(z).data
                jumps.append(float(np.abs(at0 - upsample2x(Tensor(before)).data).max()))
                set_alpha(gen, disc, 1.0)
                at1 = gen(z).data
                for a in (0.25, 0.5, 0.75):
                    set_alpha(gen, disc, a)
                    fade_err = max(fade_err, float(np.abs(gen(z).data - ((1 - a) * at0 + a * at1)).max()))
                # at alpha = 0 the grown discriminator equals the previous one on the pooled input
                set_alpha(gen, disc, 0.0)
                x = np.where(rng.random((3, 1, gen.resolution, gen.resolution)) < 0.5, 1.0, -1.0)
                low_x = x.reshape(3, 1, gen.resolution // 2, 2, gen.resolution // 2, 2).mean(axis=(3, 5))
                d_now = disc(x).data
                disc.level -= 1
                disc.alpha = 1.0
                d_low = disc(low_x).data
                disc.level += 1
                disc.alpha = 0.0
                jumps.append(float(np.abs(d_now - d_low).max()))
            out = gen(z).data
            assert out.shape == (6, 1, 2 ** (level + 1), 2 ** (level + 1))
            bound = max(bound, float(np.abs(out).max()))
            # a few updates through the fade so later grow events start from trained weights
            og, od = opt(gen), opt(disc)
            for step in range(6):
                if level > 1:
                    set_alpha(gen, disc, min(1.0, step / 4))
                real = np.where(rng.random((4, 1, gen.resolution, gen.resolution)) < 0.3, 1.0, -1.0)
                sketch_gan_step(gen, disc, real, rng.standard_normal((4, 16)), og, od)
                bound = max(bound, float(np.abs(gen(z).data).max()))
            set_alpha(gen, disc, 1.0)
        elapsed = time.perf_counter() - t0
        info.update(max_jump=max(jumps), fade_err=fade_err, max_abs=bound, seconds=elapsed)
        assert max(jumps) == 0.0
        assert fade_err < 1e-6
        assert bound <= 1.0
        assert elapsed < 120


# -- 5: training smoke ---------------------------------------------------------------------

SMOKE = TrainConfig(resolution=32, seed=0)


@pytest.fixture(scope="module")
def smoke():
    """Train once on the 200-image toy corpus at 32x32, single-threaded, and time it."""
    corpus = make_toy_corpus(200, 32, seed=7)
    with threadpool_limits(1):
        t0 = time.perf_counter()
        state = full_train(corpus.images, SMOKE)
        elapsed = time.perf_counter() - t0
    return corpus, state, elapsed


def _weights(state):
    out = {}
    for prefix, mod in (("gs", state.sketch.gen), ("ds", state.sketch.disc),
                        ("gp", state.render.gen), ("dp", state.render.disc)):
        out.update({f"{prefix}.{n}": p.data for n, p in mod.named_parameters()})
    return out


def _identical(a, b):
    wa, wb = _weights(a), _weights(b)
    return (wa.keys() == wb.keys() and all(np.array_equal(wa[k], wb[k]) for k in wa)
            and a.sketch.history == b.sketch.history and a.render.history == b.render.history)


def test_criterion_5_training_smoke(criterion, smoke, tmp_path):
    with criterion(5, "full_train on 200 toy images at 32x32") as info:
        corpus, state, elapsed = smoke
        info["seconds"] = elapsed
        assert state.done and elapsed < 600

        l1 = np.array([h[2] for h in state.render.history])
        ratio = float(l1[-20:].mean() / l1[:5].mean())
        info["L1_final/initial"] = ratio
        assert ratio <= 0.5
        assert np.isfinite(np.asarray(state.sketch.history)).all()
        assert np.isfinite(np.asarray(state.render.history)).all()

        with threadpool_limits(1):
            rerun = full_train(corpus.images, SMOKE)
        info["rerun_bit_exact"] = _identical(rerun, state)
        assert info["rerun_bit_exact"]

        # interrupt mid sketch stage and again mid render stage, resuming from files each time
        cuts = (state.sketch.step // 2 + 1, state.sketch.step + state.render.step // 2)
        with threadpool_limits(1):
            part = full_train(corpus.images, SMOKE, max_steps=cuts[0])
            for i, cut in enumerate(cuts[1:] + (None,)):
                save_checkpoint(tmp_path / f"cut{i}.skrg", part)
                part = full_train(corpus.images, SMOKE, state=load_checkpoint(tmp_path / f"cut{i}.skrg"),
                                  max_steps=cut)
        info["resume_bit_exact"] = _identical(part, state)
        assert info["resume_bit_exact"]


# -- 6: application direction -----------------------------------------------------------------

def test_criterion_6_pretraining_direction(criterion, smoke):
    with criterion(6, "synthetic-pair pretraining vs from scratch, SEN") as info:
        _, state, _ = smoke
        labels, images = generate_pairs(state.sketch.gen, state.render.gen, 200, seed=5)
        bench = make_toy_corpus(60, 32, seed=11)
        train, test = bench.subset(range(20)), bench.subset(range(20, 60))
        wins, rows = 0, []
        with threadpool_limits(1):
            for seed in range(5):
                rep = augmentation_pretrain(images, labels, train.images, train.masks, test.images,
                                            test.masks, seed=seed, config=SMOKE)
                for arm in ("with", "without"):
                    assert set(rep.segmentation[arm]) == {"SEN", "ACC", "AUC"}
                    assert all(v is not None for v in rep.segmentation[arm].values())
                w, wo = rep.segmentation["with"]["SEN"], rep.segmentation["without"]["SEN"]
                rows.append(f"{w:.3f}/{wo:.3f}")
                wins += w >= wo
        info.update(wins=f"{wins}/5", sen_with_without=" ".join(rows))
        assert wins >= 3


# -- 7: determinism and round trips ------------------------------------------------------------

def test_criterion_7_round_trips(criterion, smoke, tmp_path):
    with criterion(7, "checkpoint, generate_pairs and report round trips") as info:
        corpus, state, _ = smoke
        save_checkpoint(tmp_path / "a.skrg", state)
        save_checkpoint(tmp_path / "b.skrg", load_checkpoint(tmp_path / "a.skrg"))
        info["ckpt_bytes"] = (tmp_path / "a.skrg").stat().st_size
        assert (tmp_path / "a.skrg").read_bytes() == (tmp_path / "b.skrg").read_bytes()

        la, ia = generate_pairs(state.sketch.gen, state.render.gen, 40, seed=3, out_dir=tmp_path / "g1")
        lb, ib = generate_pairs(state.sketch.gen, state.render.gen, 40, seed=3, out_dir=tmp_path / "g2")
        assert la.tobytes() == lb.tobytes() and ia.tobytes() == ib.tobytes()
        files = sorted(p.relative_to(tmp_path / "g1") for p in (tmp_path / "g1").rglob("*") if p.is_file())
        assert all((tmp_path / "g1" / f).read_bytes() == (tmp_path / "g2" / f).read_bytes() for f in files)
        info["pair_files"] = len(files)

        rep, _ = evaluate_sets(corpus.images[:40], ia, ("toy", "generated"), n_pairs=10,
                               config=SMOKE.as_dict())
        back = MetricReport.from_lines(rep.to_lines())
        assert back == rep and back.to_lines() == rep.to_lines()
        info["report_rows"] = len(rep.values)
