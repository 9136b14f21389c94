"""Image-set evaluation: MS-SSIM, sliced Wasserstein distance, Frechet feature
distance, and the segmentation triple SEN / ACC / AUC.

Everything here runs in float64 on plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .autodiff import Tensor, conv2d, leaky_relu, precision

# canonical five-scale weights; renormalized so they sum to exactly one
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MsSsimParams:
    scales: int = 5
    weights: tuple[float, ...] | None = None
    win_size: int = 11
    win_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0
    boundary: str = "valid"  # or "wrap"

    def scale_weights(self) -> np.ndarray:
        w = np.asarray(self.weights if self.weights is not None else MS_SSIM_WEIGHTS[: self.scales], dtype=np.float64)
        if len(w) != self.scales:
            raise ValueError("need one weight per scale")
        return w / w.sum()

    @classmethod
    def for_extent(cls, extent: int, **kw) -> "MsSsimParams":
        """Largest scale count (at most 5) whose coarsest level still fits the window."""
        win = kw.get("win_size", 11)
        scales = 1
        while scales < 5 and extent >= win * 2 ** scales:
            scales += 1
        return cls(scales=scales, **kw)


def _gauss1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter(img: np.ndarray, g: np.ndarray, boundary: str) -> np.ndarray:
    """Separable correlation over the last two axes."""
    k = len(g)
    if boundary == "wrap":
        r = k // 2
        img = np.pad(img, [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)], mode="wrap")
    elif boundary != "valid":
        raise ValueError(f"unknown boundary {boundary!r}")
    h, w = img.shape[-2] - k + 1, img.shape[-1] - k + 1
    rows = sum(g[i] * img[..., i : i + h, :] for i in range(k))
    return sum(g[j] * rows[..., :, j : j + w] for j in range(k))


def _ssim_terms(a, b, g, c1, c2, boundary):
    mu_a, mu_b = _filter(a, g, boundary), _filter(b, g, boundary)
    saa = _filter(a * a, g, boundary) - mu_a * mu_a
    sbb = _filter(b * b, g, boundary) - mu_b * mu_b
    sab = _filter(a * b, g, boundary) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * sab + c2) / (saa + sbb + c2)
    return lum, cs


def _pool2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[-2] // 2 * 2, img.shape[-1] // 2 * 2
    img = img[..., :h, :w]
    return img.reshape(*img.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def ms_ssim(a: np.ndarray, b: np.ndarray, params: MsSsimParams = MsSsimParams()) -> float:
    """Multi-scale SSIM of two images shaped (H, W) or (C, H, W), values in [0, data_range].

    Per-scale terms are averaged over channels and clamped at zero before the
    weighted product, which keeps the score in [0, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    need = params.win_size * 2 ** (params.scales - 1)
    if params.boundary == "valid" and min(a.shape[-2:]) < need:
        raise ValueError(f"images of extent {a.shape[-2:]} too small for {params.scales} scales (need {need})")
    weights = params.scale_weights()
    g = _gauss1d(params.win_size, params.win_sigma)
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    score = 1.0
    for s in range(params.scales):
        lum, cs = _ssim_terms(a, b, g, c1, c2, params.boundary)
        if s == params.scales - 1:
            term = max(float((lum * cs).mean()), 0.0)
        else:
            term = max(float(cs.mean()), 0.0)
            a, b = _pool2(a), _pool2(b)
        score *= term ** weights[s]
    return float(score)


# -- sliced Wasserstein ------------------------------------------------------

@dataclass(frozen=True)
class SwdParams:
    min_resolution: int = 16
    patch_size: int = 7
    patches_per_image: int = 128
    n_projections: int = 512
    seed: int = 0


_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _pyr_blur(img: np.ndarray) -> np.ndarray:
    pad = [(0, 0)] * (img.ndim - 2) + [(2, 2), (2, 2)]
    p = np.pad(img, pad, mode="reflect")
    h, w = img.shape[-2:]
    rows = sum(_PYR_KERNEL[i] * p[..., i : i + h, :] for i in range(5))
    return sum(_PYR_KERNEL[j] * rows[..., :, j : j + w] for j in range(5))


def _pyr_down(img):
    return _pyr_blur(img)[..., ::2, ::2]


def _pyr_up(img):
    n = img.shape[:-2]
    h, w = img.shape[-2:]
    up = np.zeros((*n, 2 * h, 2 * w))
    up[..., ::2, ::2] = img * 4
    return _pyr_blur(up)


def laplacian_pyramid(images: np.ndarray, min_resolution: int) -> list[np.ndarray]:
    """Band-pass levels from finest to coarsest; the last entry is the low-pass residual."""
    levels = []
    cur = np.asarray(images, dtype=np.float64)
    while cur.shape[-1] > min_resolution:
        low = _pyr_down(cur)
        levels.append(cur - _pyr_up(low))
        cur = low
    levels.append(cur)
    return levels


def _descriptors(level: np.ndarray, positions: np.ndarray, p: int) -> np.ndarray:
    # level: (N, C, H, W); positions: (k, 2) top-left corners shared by every image
    rows = [level[:, :, y : y + p, x : x + p] for y, x in positions]
    d = np.stack(rows, axis=1)  # N, k, C, p, p
    return d.reshape(-1, level.shape[1], p * p)


def _normalize(desc: np.ndarray) -> np.ndarray:
    mu = desc.mean(axis=(0, 2), keepdims=True)
    sd = desc.std(axis=(0, 2), keepdims=True)
    return ((desc - mu) / np.where(sd > 0, sd, 1.0)).reshape(len(desc), -1)


def sliced_wasserstein(a: np.ndarray, b: np.ndarray, directions: np.ndarray) -> float:
    """Mean over directions of the 1-D transport cost between the projected point sets."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    pa = np.sort(a @ directions, axis=0)
    pb = np.sort(b @ directions, axis=0)
    if len(pa) != len(pb):
        n = max(len(pa), len(pb))
        q = (np.arange(n) + 0.5) / n

        def quant(p):
            grid = (np.arange(len(p)) + 0.5) / len(p)
            return np.stack([np.interp(q, grid, p[:, j]) for j in range(p.shape[1])], axis=1)

        pa, pb = quant(pa), quant(pb)
    return float(np.abs(pa - pb).mean())


def random_directions(rng: np.random.Generator, dim: int, n: int) -> np.ndarray:
    d = rng.standard_normal((dim, n))
    return d / np.linalg.norm(d, axis=0, keepdims=True)


def swd(set_a: np.ndarray, set_b: np.ndarray, params: SwdParams = SwdParams()) -> dict:
    """Per-level sliced Wasserstein distances between two image sets (N, C, H, W)."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim == 3:
        a, b = a[:, None], b[:, None]
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both sets need at least one image")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError("image shapes differ between sets")
    p = params.patch_size
    rng = np.random.default_rng([params.seed, 29])
    pyr_a = laplacian_pyramid(a, params.min_resolution)
    pyr_b = laplacian_pyramid(b, params.min_resolution)
    dists = []
    for la, lb in zip(pyr_a, pyr_b):
        h, w = la.shape[-2:]
        if h < p or w < p:
            raise ValueError(f"pyramid level {h}x{w} smaller than patch size {p}")
        pos = np.stack([rng.integers(0, h - p + 1, params.patches_per_image),
                        rng.integers(0, w - p + 1, params.patches_per_image)], axis=1)
        da = _normalize(_descriptors(la, pos, p))
        db = _normalize(_descriptors(lb, pos, p))
        dirs = random_directions(rng, da.shape[1], params.n_projections)
        dists.append(sliced_wasserstein(da, db, dirs))
    return {"levels": dists, "mean": float(np.mean(dists))}


# -- Frechet distance ----------------------------------------------------------

def _sym(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_sym(m))
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(mu_a, sigma_a, mu_b, sigma_b) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The trace of the product's square root is taken from the eigenvalues of
    the symmetric form Sa^(1/2) Sb Sa^(1/2), negative ones clamped to zero.
    """
    mu_a, mu_b = np.atleast_1d(np.asarray(mu_a, float)), np.atleast_1d(np.asarray(mu_b, float))
    sa = np.atleast_2d(np.asarray(sigma_a, float))
    sb = np.atleast_2d(np.asarray(sigma_b, float))
    if mu_a.shape != mu_b.shape or sa.shape != sb.shape or sa.shape != (len(mu_a), len(mu_a)):
        raise ValueError("mean/covariance dimensions do not agree")
    for arr in (mu_a, mu_b, sa, sb):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite statistics")
    sa, sb = _sym(sa), _sym(sb)
    root_a = _psd_sqrt(sa)
    inner = np.linalg.eigvalsh(_sym(root_a @ sb @ root_a))
    tr_cross = np.sqrt(np.clip(inner, 0, None)).sum()
    diff = mu_a - mu_b
    return float(max(diff @ diff + np.trace(sa) + np.trace(sb) - 2 * tr_cross, 0.0))


class FeatureExtractor:
    """Deterministic image -> vector map; the default is a fixed random conv stack."""

    def __init__(self, name: str, fn: Callable[[np.ndarray], np.ndarray], dim: int):
        self.name, self._fn, self.dim = name, fn, dim

    def __call__(self, images: np.ndarray) -> np.ndarray:
        feats = np.asarray(self._fn(np.asarray(images, dtype=np.float64)), dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise ValueError(f"extractor {self.name} returned shape {feats.shape}")
        return feats


def random_conv_extractor(dim: int = 64, seed: int = 1234, in_channels: int = 3) -> FeatureExtractor:
    rng = np.random.default_rng([seed, 31])
    widths = [in_channels, 16, 32, dim]
    kernels = [rng.standard_normal((widths[i + 1], widths[i], 3, 3)) / np.sqrt(widths[i] * 9)
               for i in range(3)]

    def fn(images):
        if images.ndim == 3:
            images = images[:, None]
        if images.shape[1] != in_channels:
            images = np.repeat(images.mean(axis=1, keepdims=True), in_channels, axis=1)
        with precision(np.float64):
            h = Tensor(images)
            for i, k in enumerate(kernels):
                h = leaky_relu(conv2d(h, Tensor(k), stride=1 if i == 0 else 2, padding=1))
            return h.data.mean(axis=(2, 3))

    return FeatureExtractor(f"random-conv-{dim}-seed{seed}", fn, dim)


EXTRACTORS: dict[str, Callable[[], FeatureExtractor]] = {"random-conv-64": random_conv_extractor}


def feature_stats(images: np.ndarray, extractor: FeatureExtractor) -> tuple[np.ndarray, np.ndarray]:
    if len(images) < 2:
        raise ValueError("need at least two images for a covariance")
    f = extractor(images)
    return f.mean(axis=0), np.cov(f, rowvar=False, ddof=1)


# -- segmentation ----------------------------------------------------------------

def seg_confusion(pred: np.ndarray, gt: np.ndarray) -> dict[str, float | None]:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    tp = int(np.sum(pred & gt))
    fn = int(np.sum(~pred & gt))
    tn = int(np.sum(~pred & ~gt))
    fp = int(np.sum(pred & ~gt))
    sen = tp / (tp + fn) if tp + fn else None
    return {"SEN": sen, "ACC": (tp + tn) / (tp + tn + fp + fn), "TP": tp, "FN": fn, "TN": tn, "FP": fp}


def auc(scores: np.ndarray, gt: np.ndarray) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via average ranks (Mann-Whitney U)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(gt).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in size")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


# -- report --------------------------------------------------------------------

@dataclass
class MetricReport:
    dataset_ids: list[str]
    values: dict[str, float] = field(default_factory=dict)
    extractor: str = ""
    config: dict[str, str] = field(default_factory=dict)
    segmentation: dict[str, dict[str, float | None]] = field(default_factory=dict)

    def check(self) -> None:
        for k, v in self.values.items():
            if not np.isfinite(v):
                raise ValueError(f"{k} is not finite")
        for k in ("SWD", "FD"):
            if k in self.values and self.values[k] < 0:
                raise ValueError(f"{k} must be non-negative")

    def to_lines(self) -> str:
        """Machine-readable form: one ``section<TAB>key<TAB>value`` per line."""
        out = [f"dataset\t{i}\t{d}" for i, d in enumerate(self.dataset_ids)]
        out.append(f"extractor\tname\t{self.extractor}")
        out += [f"metric\t{k}\t{v!r}" for k, v in self.values.items()]
        for arm, row in self.segmentation.items():
            out += [f"seg:{arm}\t{k}\t{'' if v is None else repr(v)}" for k, v in row.items()]
        out += [f"config\t{k}\t{v}" for k, v in self.config.items()]
        return "\n".join(out) + "\n"

    @classmethod
    def from_lines(cls, text: str) -> "MetricReport":
        rep = cls(dataset_ids=[])
        for line in text.splitlines():
            if not line:
                continue
            section, key, value = line.split("\t", 2)
            if section == "dataset":
                rep.dataset_ids.append(value)
            elif section == "extractor":
                rep.extractor = value
            elif section == "metric":
                rep.values[key] = float(value)
            elif section.startswith("seg:"):
                rep.segmentation.setdefault(section[4:], {})[key] = None if value == "" else float(value)
            elif section == "config":
                rep.config[key] = value
            else:
                raise ValueError(f"unknown report section {section!r}")
        return rep

    def to_text(self) -> str:
        """Human-readable table in the layout of a per-dataset results table."""
        lines = [f"Datasets: {' vs '.join(self.dataset_ids)}"]
        if self.values:
            lines += [f"Feature extractor: {self.extractor or 'n/a'} (not Inception-v3; not comparable to "
                      "published FID)", "", f"{'Metric':<44}{'Value':>14}", "-" * 58]
            arrows = {"SWD": "lower", "FD": "lower", "MS-SSIM": "higher"}
            for k, v in self.values.items():
                hint = "" if k.endswith("_sd") else next(
                    (f" ({a} better)" for m, a in arrows.items() if k.startswith(m)), "")
                lines.append(f"{k + hint:<44}{v:>14.6f}")
        if self.segmentation:
            lines += ["", f"{'Pretrain':<12}{'SEN':>10}{'ACC':>10}{'AUC':>10}"]
            for arm, row in self.segmentation.items():
                cells = "".join(f"{'-' if row.get(m) is None else format(row[m], '.4f'):>10}"
                                for m in ("SEN", "ACC", "AUC"))
                lines.append(f"{arm:<12}{cells}")
        if self.config:
            lines += ["", "Config:"] + [f"  {k} = {v}" for k, v in self.config.items()]
        return "\n".join(lines) + "\n"


def ms_ssim_pairs(images_a: np.ndarray, images_b: np.ndarray | None, n_pairs: int, seed: int,
                  params: MsSsimParams | None = None) -> tuple[float, float]:
    """Mean and sd of MS-SSIM over random pairs; within one set when ``images_b`` is None.

    Inputs are in [-1, 1] and are mapped to [0, 1] first.
    """
    rng = np.random.default_rng([seed, 37])
    a = (np.asarray(images_a, dtype=np.float64) + 1) / 2
    b = a if images_b is None else (np.asarray(images_b, dtype=np.float64) + 1) / 2
    params = params or MsSsimParams.for_extent(a.shape[-1])
    vals = []
    for _ in range(n_pairs):
        i = int(rng.integers(len(a)))
        j = int(rng.integers(len(b)))
        if images_b is None and len(a) > 1:
            while j == i:
                j = int(rng.integers(len(b)))
        vals.append(ms_ssim(a[i], b[j], params))
    return float(np.mean(vals)), float(np.std(vals))


def evaluate_sets(real: np.ndarray, fake: np.ndarray, ids: tuple[str, str] = ("real", "fake"),
                  extractor: FeatureExtractor | None = None, swd_params: SwdParams | None = None,
                  n_pairs: int = 50, seed: int = 0, config: dict[str, str] | None = None) -> tuple[MetricReport, dict]:
    """Full comparison of a generated set against a real one; also returns per-level SWD."""
    extractor = extractor or random_conv_extractor()
    res = real.shape[-1]
    swd_params = swd_params or SwdParams(min_resolution=min(16, res), seed=seed)
    s = swd(real, fake, swd_params)
    mu_r, cov_r = feature_stats(real, extractor)
    mu_f, cov_f = feature_stats(fake, extractor)
    gg = ms_ssim_pairs(fake, None, n_pairs, seed)
    gr = ms_ssim_pairs(fake, real, n_pairs, seed)
    values = {
        "SWD": s["mean"],
        **{f"SWD_level{i}": v for i, v in enumerate(s["levels"])},
        "MS-SSIM_gen_gen_mean": gg[0],
        "MS-SSIM_gen_gen_sd": gg[1],
        "MS-SSIM_gen_real_mean": gr[0],
        "MS-SSIM_gen_real_sd": gr[1],
        "FD": frechet_distance(mu_r, cov_r, mu_f, cov_f),
    }
    rep = MetricReport(list(ids), values, extractor.name, dict(config or {}))
    rep.check()
    return rep, s
