"""Deterministic raster primitives: color conversion, edges, blurs, distances.

Images are row-major float rasters in [0, 1], shape (height, width, channels)
with 1 or 3 channels.  All distances are root-mean-square over elements so
thresholds carry across resolutions.  PNG (8-bit gray or RGB) is the
interchange format: loading maps u8 -> [0, 1] by /255, saving rounds half-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

MIN_SIDE = 8

# 3x3 Sobel stencils, applied as correlation (not flipped).
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])

# Default gradient-magnitude threshold on [0, 1] luma.
DEFAULT_EDGE_THRESHOLD = 0.25

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Image:
    """Float raster in [0, 1]; treated as immutable once constructed."""

    data: np.ndarray  # (h, w, c) float64

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (h, w, 1|3), got {d.shape}")
        if d.shape[0] < MIN_SIDE or d.shape[1] < MIN_SIDE:
            raise ValueError(f"image sides must be >= {MIN_SIDE}, got {d.shape[:2]}")
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @staticmethod
    def from_array(arr: np.ndarray) -> "Image":
        """Accept (h, w) or (h, w, c) float arrays."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, np.newaxis]
        return Image(np.ascontiguousarray(a))


@dataclass(frozen=True)
class Mask:
    """Binary raster; 1 = compared region, 0 = permitted variation.

    An all-zero mask would make every masked distance vacuous and is rejected.
    """

    bits: np.ndarray  # (h, w) bool

    def __post_init__(self) -> None:
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ValueError("mask bits must be a 2-D bool array")
        if not self.bits.any():
            raise ValueError("mask must have at least one set bit")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def set_count(self) -> int:
        return int(self.bits.sum())

    @staticmethod
    def full(height: int, width: int) -> "Mask":
        return Mask(np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class EdgeMap:
    """Binary edge raster (1 = edge pixel). May be empty, unlike a Mask."""

    bits: np.ndarray  # (h, w) bool

    def __post_init__(self) -> None:
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ValueError("edge map bits must be a 2-D bool array")

    @property
    def set_count(self) -> int:
        return int(self.bits.sum())


def to_grayscale(img: Image) -> Image:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B. 1-channel input is returned unchanged."""
    if img.channels == 1:
        return img
    luma = img.data @ LUMA_WEIGHTS
    return Image(np.clip(luma, 0.0, 1.0)[:, :, np.newaxis])


def sobel_magnitude(img: Image) -> np.ndarray:
    """Gradient magnitude sqrt(Gx^2 + Gy^2) on luma, replicate-padded borders."""
    luma = to_grayscale(img).data[:, :, 0]
    gx = ndimage.correlate(luma, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(luma, SOBEL_Y, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def edge_map(img: Image, t_edge: float = DEFAULT_EDGE_THRESHOLD) -> EdgeMap:
    """Edge pixel iff Sobel gradient magnitude strictly exceeds t_edge."""
    if not 0.0 < t_edge <= 1.0:
        raise ValueError(f"t_edge must be in (0, 1], got {t_edge}")
    return EdgeMap(sobel_magnitude(img) > t_edge)


def rmse(a: Image, b: Image) -> float:
    """Root-mean-square difference over all elements; symmetric, in [0, 1]."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    return float(np.sqrt(np.mean(diff * diff)))


def masked_rmse(a: Image, b: Image, m: Mask) -> float:
    """RMSE restricted to masked-in pixels. Equals rmse(a, b) for an all-ones mask."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch: {a.data.shape} vs {b.data.shape}")
    if m.bits.shape != a.data.shape[:2]:
        raise ValueError(f"mask shape {m.bits.shape} does not match image {a.data.shape[:2]}")
    diff = (a.data - b.data)[m.bits]
    return float(np.sqrt(np.mean(diff * diff)))


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps with radius ceil(3 * sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian blur with replicate borders; sigma=0 is the identity."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    kernel = gaussian_kernel_1d(sigma)
    out = np.empty_like(img.data)
    for c in range(img.channels):
        tmp = ndimage.correlate1d(img.data[:, :, c], kernel, axis=0, mode="nearest")
        out[:, :, c] = ndimage.correlate1d(tmp, kernel, axis=1, mode="nearest")
    return Image(np.clip(out, 0.0, 1.0))


def load_image(path) -> Image:
    """Load an 8-bit gray or RGB PNG as a [0, 1] raster."""
    with PILImage.open(path) as pil:
        if pil.mode == "L":
            arr = np.asarray(pil, dtype=np.float64)[:, :, np.newaxis]
        elif pil.mode == "RGB":
            arr = np.asarray(pil, dtype=np.float64)
        else:
            raise ValueError(f"unsupported PNG mode {pil.mode!r} (expected L or RGB)")
    return Image(arr / 255.0)


def save_image(img: Image, path) -> None:
    """Write as 8-bit PNG, rounding half-up."""
    u8 = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    if img.channels == 1:
        PILImage.fromarray(u8[:, :, 0], mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(u8, mode="RGB").save(path, format="PNG")


def load_mask(path) -> Mask:
    with PILImage.open(path) as pil:
        arr = np.asarray(pil.convert("1"), dtype=bool)
    return Mask(arr)


def save_mask(m: Mask, path) -> None:
    PILImage.fromarray(m.bits).convert("1").save(path, format="PNG")
