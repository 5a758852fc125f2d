"""Page loading, binarization, and global scale/rotation transforms.

Pages are single-channel float32 arrays in [0, 1]. Downstream stages
work on binarized pages where ink is 1 and background is 0, regardless
of the polarity of the source scan.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError

REFERENCE_DIM = 1200
PERCENTILE = 80.0
FILTER_WINDOW = 3
# Quantile pair used to place the ink/background threshold.
QUANTILE_LOW = 0.10
QUANTILE_HIGH = 0.90
# Below this spread the quantiles sit in one mode and the midpoint of the
# value range is used instead.
DEGENERATE_SPREAD = 0.05


@dataclass
class PageImage:
    """A page raster plus the global transform it was produced under.

    scale and rotation record the transform relative to the reference
    frame; freshly loaded pages carry (1.0, 0).
    """

    pixels: np.ndarray
    scale: float = 1.0
    rotation: int = 0
    binary: bool = False
    source: str | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2:
            raise DataError(f"page pixels must be 2-D, got shape {px.shape}")
        self.pixels = px

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def load_page(path: str | Path) -> PageImage:
    """Read a PNG or PGM file into a grayscale PageImage."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"page image not found: {path}")
    with Image.open(path) as img:
        if img.mode in ("I", "I;16", "I;16B"):
            arr = np.asarray(img, dtype=np.float32) / 65535.0
        else:
            arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    return PageImage(arr, source=str(path))


def save_page(pixels: np.ndarray, path: str | Path) -> None:
    arr = np.clip(np.asarray(pixels, dtype=np.float32), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="L").save(Path(path))


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center aligned bilinear resampling with edge clamping."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    if out_h <= 0 or out_w <= 0:
        raise DataError(f"invalid target size ({out_h}, {out_w})")
    if (out_h, out_w) == (h, w):
        return x.copy()

    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(x.dtype if x.dtype.kind == "f" else np.float64)
    fx = (sx - x0).astype(fy.dtype)

    fy_col = fy[:, None]
    fx_row = fx[None, :]
    top = x[..., y0[:, None], x0[None, :]] * (1 - fx_row) + x[..., y0[:, None], x1[None, :]] * fx_row
    bot = x[..., y1[:, None], x0[None, :]] * (1 - fx_row) + x[..., y1[:, None], x1[None, :]] * fx_row
    return top * (1 - fy_col) + bot * fy_col


def rescale_to_reference(page: PageImage, reference: int = REFERENCE_DIM) -> PageImage:
    """Rescale so the larger page dimension equals `reference`.

    Aspect ratio is preserved up to the 1 px rounding of the short side.
    A page already at the reference dimension passes through unchanged.
    """
    h, w = page.shape
    m = max(h, w)
    if m == reference:
        return page
    if m <= 0:
        raise DataError("empty page")
    factor = reference / m
    out_h = reference if h >= w else max(1, round(h * factor))
    out_w = reference if w >= h else max(1, round(w * factor))
    return replace(page, pixels=bilinear_resize(page.pixels, out_h, out_w).astype(np.float32))


def _is_binary(x: np.ndarray) -> bool:
    return bool(np.all((x == 0.0) | (x == 1.0)))


def binarize(page: PageImage, window: int = FILTER_WINDOW) -> PageImage:
    """Binarize a page to an ink=1 / background=0 mask.

    Steps: min-max normalization, polarity orientation so ink is the
    minority high phase, then a threshold at the midpoint of the
    10%/90% intensity quantiles of the percentile-filtered image. The
    filter additionally vetoes pixels whose own filtered value falls
    below the threshold, which strips isolated specks without fattening
    strokes (rank filters dilate thin marks when thresholded directly).
    Already-binary pages pass through (idempotence), with polarity
    fixed if needed.
    """
    x = page.pixels.astype(np.float64)
    if _is_binary(x):
        ink = x
        if ink.mean() > 0.5:
            ink = 1.0 - ink
        return replace(page, pixels=ink.astype(np.float32), binary=True)

    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return replace(page, pixels=np.zeros_like(x, dtype=np.float32), binary=True)
    x = (x - lo) / (hi - lo)
    if x.mean() > 0.5:
        x = 1.0 - x

    filtered = ndimage.percentile_filter(x, percentile=PERCENTILE, size=window, mode="nearest")
    q_lo, q_hi = np.quantile(filtered, [QUANTILE_LOW, QUANTILE_HIGH])
    if q_hi - q_lo < DEGENERATE_SPREAD:
        thr = 0.5
    else:
        thr = 0.5 * (q_lo + q_hi)
    mask = ((x > thr) & (filtered > thr)).astype(np.float32)
    return replace(page, pixels=mask, binary=True)


def apply_global_transform(pixels: np.ndarray, scale: float, rotation: int) -> np.ndarray:
    """Scale then rotate a page raster.

    Rotation is restricted to multiples of 90 degrees; positive angles
    rotate counter-clockwise, so right-angle rotations are exact index
    permutations and invertible without resampling loss.
    """
    if rotation % 90 != 0:
        raise DataError(f"rotation must be a multiple of 90 degrees, got {rotation}")
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    out = pixels
    if scale != 1.0:
        h, w = pixels.shape
        out = bilinear_resize(pixels, max(1, round(h * scale)), max(1, round(w * scale)))
    k = (rotation // 90) % 4
    if k:
        out = np.rot90(out, k)
    return np.ascontiguousarray(out)


def undo_rotation(maps: np.ndarray, rotation: int) -> np.ndarray:
    """Rotate channel maps back into the untransformed page frame."""
    if rotation % 90 != 0:
        raise DataError(f"rotation must be a multiple of 90 degrees, got {rotation}")
    k = (rotation // 90) % 4
    if not k:
        return maps
    return np.ascontiguousarray(np.rot90(maps, -k, axes=(-2, -1)))
