"""Latent representation and the encoder/decoder boundary.

Latents are float64 arrays of shape ``(C, h, w)``. Two codecs are provided:
:class:`IdentityCodec` (``f = 1``, lossless) and :class:`PatchAverageCodec`,
whose block-mean / bilinear round trip throws away high frequencies the way a
VAE bottleneck does.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .imagecore import as_image, as_mask, resize_bilinear


def as_latent(data) -> np.ndarray:
    z = np.asarray(data, dtype=np.float64)
    if z.ndim != 3 or min(z.shape) < 1:
        raise ContractError(f"latent must be (C, h, w) with all dims >= 1, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ContractError("latent contains non-finite values")
    return z


def _pad_to_multiple(arr: np.ndarray, f: int) -> np.ndarray:
    """Replicate-pad the first two axes on the bottom/right up to a multiple of ``f``."""
    h, w = arr.shape[:2]
    ph, pw = (-h) % f, (-w) % f
    if ph == 0 and pw == 0:
        return arr
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="edge")


def _block_mean(arr: np.ndarray, f: int) -> np.ndarray:
    h, w = arr.shape[:2]
    rest = arr.shape[2:]
    return arr.reshape(h // f, f, w // f, f, *rest).mean(axis=(1, 3))


class LatentCodec:
    """Encoder/decoder pair. Subclasses set ``downsample_factor``."""

    downsample_factor = 1
    name = "codec"

    def latent_shape(self, height: int, width: int) -> tuple[int, int]:
        f = self.downsample_factor
        return -(-height // f), -(-width // f)

    def encode(self, img) -> np.ndarray:
        raise NotImplementedError

    def decode(self, z, size=None) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.name, "factor": self.downsample_factor}


class IdentityCodec(LatentCodec):
    """Latent equals the image data, channel-first."""

    name = "identity"

    def encode(self, img):
        img = as_image(img)
        return np.ascontiguousarray(img.transpose(2, 0, 1))

    def decode(self, z, size=None):
        z = as_latent(z)
        img = z.transpose(1, 2, 0).copy()
        if size is not None and tuple(size) != img.shape[:2]:
            raise ContractError(f"identity codec cannot decode {img.shape[:2]} latent to {tuple(size)}")
        return img


class PatchAverageCodec(LatentCodec):
    """Each latent cell is the mean of an ``f x f`` pixel block.

    Decoding upsamples the cell means bilinearly and clamps to ``[0, 1]``; any
    detail finer than a block does not survive the round trip.
    """

    name = "patch_average"

    def __init__(self, factor: int = 8):
        if int(factor) != factor or factor < 1:
            raise ContractError(f"downsample factor must be a positive integer, got {factor}")
        self.downsample_factor = int(factor)

    def encode(self, img):
        img = as_image(img)
        f = self.downsample_factor
        block = _block_mean(_pad_to_multiple(img, f), f)
        return np.ascontiguousarray(block.transpose(2, 0, 1))

    def decode_unclamped(self, z, size=None):
        z = as_latent(z)
        f = self.downsample_factor
        c, h, w = z.shape
        up = resize_bilinear(z.transpose(1, 2, 0), h * f, w * f)
        if size is not None:
            height, width = size
            if height > h * f or width > w * f or height <= (h - 1) * f or width <= (w - 1) * f:
                raise ContractError(f"latent {h}x{w} with f={f} cannot decode to {height}x{width}")
            up = up[:height, :width]
        return up

    def decode(self, z, size=None):
        return np.clip(self.decode_unclamped(z, size), 0.0, 1.0)


def make_codec(kind: str = "patch_average", factor: int = 8) -> LatentCodec:
    if kind == "identity":
        return IdentityCodec()
    if kind in ("patch_average", "patch-average"):
        return PatchAverageCodec(factor)
    raise ContractError(f"unknown codec {kind!r}")


def encode(codec: LatentCodec, img) -> np.ndarray:
    return codec.encode(img)


def decode(codec: LatentCodec, z, size=None) -> np.ndarray:
    """Decode ``z``; ``size`` crops the result back to an unpadded image size."""
    return codec.decode(z, size)


def downscale_mask(mask, f: int) -> np.ndarray:
    """Latent-resolution mask: a cell is set when at least half of its block is set."""
    mask = as_mask(mask)
    if int(f) != f or f < 1:
        raise ContractError(f"factor must be a positive integer, got {f}")
    f = int(f)
    if f == 1:
        return mask.copy()
    frac = _block_mean(_pad_to_multiple(mask.astype(np.float64), f), f)
    return frac >= 0.5
