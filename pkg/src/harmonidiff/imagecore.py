"""Pixel-domain primitives.

Images are float64 arrays of shape ``(H, W, C)`` with ``C`` in ``{1, 3}`` and
values in ``[0, 1]``. Masks are boolean ``(H, W)`` arrays. Scalar grids
(grayscale, gradient magnitude) are float64 ``(H, W)`` arrays.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ContractError, ImageFormatError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_SUPPORTED_FORMATS = {"PNG", "PPM"}
_MODE_CHANNELS = {"L": 1, "RGB": 3}


def as_image(data) -> np.ndarray:
    """Validate and normalise an array into the ``(H, W, C)`` image layout.

    2-D input is treated as a single-channel image.
    """
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ContractError(f"expected (H, W) or (H, W, 1|3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ContractError("image must be at least 1x1")
    if not np.all(np.isfinite(img)):
        raise ContractError("image contains non-finite values")
    return img


def as_mask(data, shape=None) -> np.ndarray:
    mask = np.asarray(data)
    if mask.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.dtype != bool:
        if not np.all((mask == 0) | (mask == 1)):
            raise ContractError("mask values must be 0 or 1")
        mask = mask.astype(bool)
    if shape is not None and mask.shape != tuple(shape):
        raise ContractError(f"mask shape {mask.shape} does not match grid {tuple(shape)}")
    return mask


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PGM/PPM into a float image in ``[0, 1]``.

    Raises:
        OSError: the file is missing, truncated or otherwise unreadable.
        ImageFormatError: the file is not PNG/PNM or is not 8-bit gray/RGB.
    """
    path = Path(path)
    try:
        handle = Image.open(path)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a PNG or PPM/PGM file") from exc
    with handle as im:
        if im.format not in _SUPPORTED_FORMATS:
            raise ImageFormatError(f"{path}: unsupported format {im.format}")
        mode = im.mode
        if mode == "P":
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            mode = im.mode
        if mode in ("LA", "RGBA"):
            # alpha is not part of the data model
            mode = mode[:-1]
        elif mode == "1":
            mode = "L"
        elif mode not in _MODE_CHANNELS:
            raise ImageFormatError(f"{path}: unsupported mode {im.mode} (need 8-bit gray or RGB)")
        try:
            im.load()
            arr = np.asarray(im.convert(mode), dtype=np.uint8)
        except (OSError, ValueError, SyntaxError) as exc:
            raise OSError(f"{path}: unreadable image data: {exc}") from exc
    return as_image(arr.astype(np.float64) / 255.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """8-bit quantisation, rounding half away from zero."""
    scaled = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Write ``img`` as PNG, or as binary PGM/PPM when the suffix asks for it."""
    img = as_image(img)
    path = Path(path)
    q = quantize(img)
    pil = Image.fromarray(q[:, :, 0], mode="L") if q.shape[2] == 1 else Image.fromarray(q, mode="RGB")
    suffix = path.suffix.lower()
    fmt = "PPM" if suffix in (".ppm", ".pgm", ".pnm") else "PNG"
    pil.save(path, format=fmt)


def to_grayscale(img) -> np.ndarray:
    img = as_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0].copy()
    r, g, _ = LUMA_WEIGHTS
    # blue weight as the complement so that white maps to exactly 1.0
    gray = r * img[:, :, 0] + g * img[:, :, 1] + (1.0 - r - g) * img[:, :, 2]
    return np.clip(gray, 0.0, 1.0)


def sobel_gradient_magnitude(gray) -> np.ndarray:
    """Per-pixel ``sqrt(Gx^2 + Gy^2)`` with 3x3 Sobel kernels and edge replication."""
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2 or g.size == 0:
        raise ContractError(f"expected non-empty 2-D grid, got shape {g.shape}")
    p = np.pad(g, 1, mode="edge")
    h, w = g.shape
    # p[i + di, j + dj] for di, dj in {0, 1, 2}
    s = lambda di, dj: p[di:di + h, dj:dj + w]  # noqa: E731
    gx = (s(0, 2) + 2 * s(1, 2) + s(2, 2)) - (s(0, 0) + 2 * s(1, 0) + s(2, 0))
    gy = (s(2, 0) + 2 * s(2, 1) + s(2, 2)) - (s(0, 0) + 2 * s(0, 1) + s(0, 2))
    return np.hypot(gx, gy)


def _check_radius(radius):
    if int(radius) != radius or radius < 0:
        raise ContractError(f"radius must be a non-negative integer, got {radius}")
    return int(radius)


def dilate(mask, radius: int) -> np.ndarray:
    """Square-neighbourhood dilation; pixels outside the grid count as 0."""
    mask = as_mask(mask)
    r = _check_radius(radius)
    if r == 0:
        return mask.copy()
    out = ndimage.maximum_filter(mask.astype(np.uint8), size=2 * r + 1, mode="constant", cval=0)
    return out.astype(bool)


def erode(mask, radius: int) -> np.ndarray:
    """Square-neighbourhood erosion; pixels outside the grid count as 0."""
    mask = as_mask(mask)
    r = _check_radius(radius)
    if r == 0:
        return mask.copy()
    out = ndimage.minimum_filter(mask.astype(np.uint8), size=2 * r + 1, mode="constant", cval=0)
    return out.astype(bool)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def rescaled_shape(height: int, width: int, src_gsd: float, tar_gsd: float) -> tuple[int, int]:
    if not (src_gsd > 0 and tar_gsd > 0):
        raise ContractError(f"GSD values must be positive, got {src_gsd}, {tar_gsd}")
    ratio = src_gsd / tar_gsd
    return max(1, round_half_up(height * ratio)), max(1, round_half_up(width * ratio))


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling on pixel centres with clamped borders.

    Works on ``(H, W)`` and ``(H, W, C)`` arrays.
    """
    arr = np.asarray(arr, dtype=np.float64)
    in_h, in_w = arr.shape[:2]

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(in_h, out_h)
    x0, x1, fx = axis(in_w, out_w)
    if arr.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bottom = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def rescale_by_gsd(img, src_gsd: float, tar_gsd: float) -> np.ndarray:
    """Resample a source patch so its pixels have the target's ground sampling distance."""
    img = as_image(img)
    out_h, out_w = rescaled_shape(img.shape[0], img.shape[1], src_gsd, tar_gsd)
    if (out_h, out_w) == img.shape[:2]:
        return img.copy()
    return np.clip(resize_bilinear(img, out_h, out_w), 0.0, 1.0)


def rescale_mask_by_gsd(mask, src_gsd: float, tar_gsd: float) -> np.ndarray:
    """Nearest-neighbour counterpart of :func:`rescale_by_gsd` for masks."""
    mask = as_mask(mask)
    out_h, out_w = rescaled_shape(mask.shape[0], mask.shape[1], src_gsd, tar_gsd)
    rows = np.minimum((np.arange(out_h) + 0.5) * mask.shape[0] / out_h, mask.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(out_w) + 0.5) * mask.shape[1] / out_w, mask.shape[1] - 1).astype(int)
    return mask[np.ix_(rows, cols)]
