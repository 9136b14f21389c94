"""Sketch drafts: Sobel edges, Gaussian lowpass, threshold, open-then-close.

All filters are cross-correlations with edge-replicated borders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class SketchParams:
    sigma: float = 1.0
    ksize: int = 5
    thresh: float = 0.25
    radius: int = 1

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.ksize < 3 or self.ksize % 2 == 0:
            raise ValueError("ksize must be odd and >= 3")
        if not 0 < self.thresh < 1:
            raise ValueError("thresh must lie in (0, 1)")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")


@dataclass
class SketchDraft:
    mask: np.ndarray  # uint8, values {0, 1}
    source: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def as_signed(self) -> np.ndarray:
        """{0,1} -> {-1,+1} float32, the range networks consume."""
        return self.mask.astype(np.float32) * 2 - 1


def to_gray(image: np.ndarray) -> np.ndarray:
    """Unweighted channel mean.  3-D input is channels-first if it leads with 1 or 3."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3:
        return image.mean(axis=0 if image.shape[0] in (1, 3) else -1)
    raise ValueError(f"expected a 2-D or 3-D image, got shape {image.shape}")


def sobel_magnitude(image: np.ndarray) -> np.ndarray:
    """sqrt(Gx^2 + Gy^2) for the standard 3x3 kernels, applied separably.

    Differencing first means a constant region gives exactly zero.
    """
    gray = to_gray(image)
    if gray.size == 0:
        raise ValueError("empty image")
    p = np.pad(gray, 1, mode="edge")
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = dx[:-2] + 2 * dx[1:-1] + dx[2:]
    gy = dy[:, :-2] + 2 * dy[:, 1:-1] + dy[:, 2:]
    return np.sqrt(gx * gx + gy * gy)


def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError("ksize must be a positive odd integer")
    x = np.arange(ksize) - ksize // 2
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_lowpass(image: np.ndarray, sigma: float, ksize: int) -> np.ndarray:
    """Separable normalized Gaussian blur of a 2-D array."""
    k = gaussian_kernel1d(sigma, ksize)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("gaussian_lowpass expects a non-empty 2-D array")
    r = ksize // 2
    h, w = img.shape
    p = np.pad(img, ((r, r), (0, 0)), mode="edge")
    rows = sum(k[i] * p[i : i + h] for i in range(ksize))
    p = np.pad(rows, ((0, 0), (r, r)), mode="edge")
    return sum(k[j] * p[:, j : j + w] for j in range(ksize))


def binarize(image: np.ndarray, thresh: float) -> np.ndarray:
    if not 0 < thresh < 1:
        raise ValueError("thresh must lie in (0, 1)")
    img = np.asarray(image, dtype=np.float64)
    peak = img.max() if img.size else 0.0
    if peak <= 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return (img / peak > thresh).astype(np.uint8)


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    r = int(radius)
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


def _check_binary(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b)
    if b.ndim < 2:
        raise ValueError("morphology expects a 2-D image or a stack of them")
    if b.dtype != bool and not ((b == 0) | (b == 1)).all():
        raise ValueError("morphology expects a two-valued {0,1} image")
    return b.astype(bool)


def _shifted(b: np.ndarray, radius: int):
    """Disk-neighbour views of ``b`` over its last two axes, border replicated."""
    r = int(radius)
    p = np.pad(b, [(0, 0)] * (b.ndim - 2) + [(r, r), (r, r)], mode="edge")
    h, w = b.shape[-2:]
    return [p[..., r + dy : r + dy + h, r + dx : r + dx + w] for dy, dx in disk_offsets(r)]


def erode(binary: np.ndarray, radius: int) -> np.ndarray:
    """Works on one (H, W) mask or a stack (..., H, W)."""
    return np.logical_and.reduce(_shifted(_check_binary(binary), radius)).astype(np.uint8)


def dilate(binary: np.ndarray, radius: int) -> np.ndarray:
    return np.logical_or.reduce(_shifted(_check_binary(binary), radius)).astype(np.uint8)


def opening(binary: np.ndarray, radius: int) -> np.ndarray:
    return dilate(erode(binary, radius), radius)


def closing(binary: np.ndarray, radius: int) -> np.ndarray:
    return erode(dilate(binary, radius), radius)


def open_then_close(binary: np.ndarray, radius: int) -> np.ndarray:
    return closing(opening(binary, radius), radius)


def extract_sketch(image: np.ndarray, params: SketchParams = SketchParams(), source: str = "") -> SketchDraft:
    edges = sobel_magnitude(image)
    smooth = gaussian_lowpass(edges, params.sigma, params.ksize)
    mask = open_then_close(binarize(smooth, params.thresh), params.radius)
    return SketchDraft(mask=mask, source=source)
