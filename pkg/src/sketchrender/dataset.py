"""PNG corpora, resizing, manifests and the procedural vessel corpus."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"


@dataclass
class ManifestEntry:
    image: str
    sketch: str = ""
    mask: str = ""

    def to_line(self) -> str:
        return f"{self.image}\t{self.sketch}\t{self.mask}"

    @classmethod
    def from_line(cls, line: str) -> "ManifestEntry":
        parts = line.rstrip("\n").split("\t")
        parts += [""] * (3 - len(parts))
        return cls(*parts[:3])


@dataclass
class ImageDataset:
    root: Path
    entries: list[ManifestEntry]
    images: np.ndarray  # (N, C, R, R) float32 in [-1, 1]
    resolution: int
    channels: int = 3
    masks: np.ndarray | None = None  # (N, R, R) uint8 {0,1}
    shuffle_seed: int = 0
    skipped: list[str] = field(default_factory=list)
    sketches: np.ndarray | None = None  # (N, R, R) uint8 {0,1}

    def __len__(self) -> int:
        return len(self.entries)

    def order(self, epoch: int = 0) -> np.ndarray:
        return np.random.default_rng([self.shuffle_seed, epoch]).permutation(len(self))

    def split(self, fraction: float, seed: int = 0) -> tuple["ImageDataset", "ImageDataset"]:
        idx = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(fraction * len(self)))
        return self.subset(np.sort(idx[:cut])), self.subset(np.sort(idx[cut:]))

    def subset(self, idx) -> "ImageDataset":
        idx = np.asarray(idx, dtype=int)
        def pick(a):
            return None if a is None else a[idx]

        return ImageDataset(self.root, [self.entries[i] for i in idx], self.images[idx], self.resolution,
                            self.channels, pick(self.masks), self.shuffle_seed, [], pick(self.sketches))


def bilinear_resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear interpolation with half-pixel centres on an H x W (x C) array."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, height)
    x0, x1, fx = axis(w, width)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def to_signed(u8: np.ndarray) -> np.ndarray:
    return (np.asarray(u8, dtype=np.float32) / np.float32(127.5) - 1).astype(np.float32)


def to_uint8(signed: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(signed, dtype=np.float64) + 1) * 127.5), 0, 255).astype(np.uint8)


def read_png(path: Path, channels: int = 3) -> np.ndarray:
    """Decode to H x W x channels uint8; grayscale is replicated when 3 channels are wanted."""
    with Image.open(path) as im:
        im.load()
        if channels == 1:
            arr = np.asarray(im.convert("L"))[..., None]
        else:
            arr = np.asarray(im.convert("RGB"))
    return arr


def write_png(path: Path, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array)
    if arr.ndim == 3 and arr.shape[0] in (1, 3) and arr.shape[-1] not in (1, 3):
        arr = arr.transpose(1, 2, 0)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr.astype(np.uint8)).save(path, format="PNG")


def write_binary_png(path: Path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).convert("1").save(path, format="PNG")


def read_binary_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def read_manifest(path: Path) -> list[ManifestEntry]:
    lines = Path(path).read_text().splitlines()
    return [ManifestEntry.from_line(ln) for ln in lines if ln.strip()]


def write_manifest(path: Path, entries: list[ManifestEntry]) -> None:
    Path(path).write_text("".join(e.to_line() + "\n" for e in entries))


def _prepare(arr: np.ndarray, resolution: int) -> np.ndarray:
    if arr.shape[:2] != (resolution, resolution):
        arr = bilinear_resize(arr.astype(np.float64), resolution, resolution)
        arr = np.clip(np.rint(arr), 0, 255)
    return to_signed(arr).transpose(2, 0, 1)


def load_dataset(directory, resolution: int = 64, channels: int = 3, skip_undecodable: bool = False,
                 shuffle_seed: int = 0) -> ImageDataset:
    """Load a PNG directory (or one carrying manifest.tsv) as a [-1, 1] C x R x R stack."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    if (root / MANIFEST).exists():
        entries = read_manifest(root / MANIFEST)
    else:
        entries = [ManifestEntry(p.name) for p in sorted(root.glob("*.png"), key=lambda p: p.name)]
    if not entries:
        raise ValueError(f"no images found in {root}")

    images, masks, sketches, kept, skipped = [], [], [], [], []
    for e in entries:
        try:
            arr = read_png(root / e.image, channels)
        except (OSError, ValueError) as err:
            if not skip_undecodable:
                raise ValueError(f"cannot decode {root / e.image}: {err}") from err
            log.warning("skipping undecodable %s", root / e.image)
            skipped.append(e.image)
            continue
        images.append(_prepare(arr, resolution))
        if e.mask:
            masks.append(_binary_at(root / e.mask, resolution))
        if e.sketch:
            sketches.append(_binary_at(root / e.sketch, resolution))
        kept.append(e)
    if not kept:
        raise ValueError(f"no decodable images in {root}")
    mask_arr = np.stack(masks) if len(masks) == len(kept) else None
    sketch_arr = np.stack(sketches) if len(sketches) == len(kept) else None
    return ImageDataset(root, kept, np.stack(images).astype(np.float32), resolution, channels, mask_arr,
                        shuffle_seed, skipped, sketch_arr)


def _binary_at(path: Path, resolution: int) -> np.ndarray:
    m = read_binary_png(path).astype(np.float64)
    if m.shape != (resolution, resolution):
        m = bilinear_resize(m, resolution, resolution)
    return (m >= 0.5).astype(np.uint8)


# -- procedural corpus -------------------------------------------------------

def _bezier(ctrl: np.ndarray, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2, p3 = ctrl
    return ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t * t * p2 + t ** 3 * p3


def toy_sample(rng: np.random.Generator, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """One fundus-like image (H x W x 3 uint8) and its vessel mask (H x W uint8)."""
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r] + 0.5
    centre = rng.uniform(0.3 * r, 0.7 * r, size=2)
    dist = np.hypot(yy - centre[0], xx - centre[1]) / (0.75 * r)
    t = np.clip(dist, 0, 1)
    t = t * t * (3 - 2 * t)
    inner = np.array([205.0, 115.0, 60.0]) + rng.uniform(-12, 12, 3)
    outer = np.array([125.0, 50.0, 25.0]) + rng.uniform(-12, 12, 3)
    img = inner * (1 - t[..., None]) + outer * t[..., None]

    # distances only matter below 1.5 px, so each curve sample updates a 5x5 window around it
    dmin = np.full(r * r, np.inf)
    off = np.arange(-2, 3)
    for _ in range(int(rng.integers(2, 6))):
        ctrl = rng.uniform(-0.1 * r, 1.1 * r, size=(4, 2))
        pts = _bezier(ctrl, 6 * r)
        iy = np.floor(pts[:, 0]).astype(int)[:, None, None] + off[None, :, None]
        ix = np.floor(pts[:, 1]).astype(int)[:, None, None] + off[None, None, :]
        iy, ix = np.broadcast_arrays(iy, ix)
        d = np.sqrt((iy + 0.5 - pts[:, 0, None, None]) ** 2 + (ix + 0.5 - pts[:, 1, None, None]) ** 2)
        keep = (iy >= 0) & (iy < r) & (ix >= 0) & (ix < r)
        np.minimum.at(dmin, iy[keep] * r + ix[keep], d[keep])
    dmin = dmin.reshape(r, r)
    mask = (dmin <= 0.75).astype(np.uint8)
    cover = np.clip(1.5 - dmin, 0.0, 1.0)
    img = img * (1 - 0.55 * cover[..., None])
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def make_toy_corpus(n: int, resolution: int = 64, seed: int = 0, out_dir=None) -> ImageDataset:
    """Seeded vessel-like corpus; written as PNG + manifest when ``out_dir`` is given."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng([seed, 23])
    pics, masks = zip(*(toy_sample(rng, resolution) for _ in range(n)))
    entries = [ManifestEntry(f"images/{i:05d}.png", "", f"masks/{i:05d}.png") for i in range(n)]
    root = Path(out_dir) if out_dir is not None else Path(".")
    if out_dir is not None:
        for e, p, m in zip(entries, pics, masks):
            write_png(root / e.image, p)
            write_binary_png(root / e.mask, m)
        write_manifest(root / MANIFEST, entries)
    images = np.stack([to_signed(p).transpose(2, 0, 1) for p in pics])
    return ImageDataset(root, entries, images, resolution, 3, np.stack(masks))
