"""Masked image perturbation operators.

All operators are pure: pixels outside the mask come back bit-identical,
and the same (inputs, seed) always produce the same bytes. Blur and noise
are the two probe perturbations (blur for object regions, additive
Gaussian noise for backgrounds); the warm filter and flat recolor are
preprocessing / intervention helpers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Image, PipelineConfig, RegionKind, RegionMask, derive_rng
from .errors import InvalidKernel


@dataclass(frozen=True)
class Blur:
    kernel: int

    def __post_init__(self):
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise InvalidKernel(f"blur kernel must be odd and >= 3, got {self.kernel}")

    def describe(self) -> str:
        return f"blur(kernel={self.kernel})"


@dataclass(frozen=True)
class Noise:
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"noise sigma must be > 0, got {self.sigma}")

    def describe(self) -> str:
        return f"noise(sigma={self.sigma:.6g})"


PerturbKind = Blur | Noise


def kind_for_region(kind: RegionKind, cfg: PipelineConfig) -> PerturbKind:
    """Object regions get blurred, background regions get noised."""
    if kind == RegionKind.OBJECT:
        return Blur(cfg.blur_kernel)
    return Noise(cfg.noise_sigma)


def _mask_array(mask, image: Image) -> np.ndarray:
    """Accept a RegionMask or a bare boolean array (which may be all-false)."""
    if isinstance(mask, RegionMask):
        mask.require_match(image)
        return mask.mask
    arr = np.asarray(mask, dtype=bool)
    if arr.shape != (image.height, image.width):
        raise ValueError(f"mask {arr.shape} does not match image {(image.height, image.width)}")
    return arr


def blur_masked(image: Image, mask, kernel: int) -> Image:
    """Gaussian-blur the full image (sigma = kernel/6, truncated, replicate
    edges) and composite the result under the mask."""
    if kernel % 2 == 0 or kernel < 1:
        raise InvalidKernel(f"kernel must be odd and positive, got {kernel}")
    m = _mask_array(mask, image)
    if not m.any():
        return image
    blurred = _kernels.round_to_byte(_kernels.blur_float(image.to_float(), kernel))
    out = image.pixels.copy()
    out[m] = blurred[m]
    return Image(out)


def noise_masked(image: Image, mask, sigma: float, seed: int) -> Image:
    """Add clamped per-channel Gaussian noise (on the [0, 1] scale) inside the mask."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    m = _mask_array(mask, image)
    rng = derive_rng(seed, "noise")
    eta = rng.standard_normal(image.pixels.shape) * sigma
    scaled = np.clip(image.to_float() / 255.0 + eta, 0.0, 1.0) * 255.0
    noised = _kernels.round_to_byte(scaled)
    out = image.pixels.copy()
    out[m] = noised[m]
    return Image(out)


def warm_filter(image: Image, gains: tuple = (1.10, 1.00, 0.90)) -> Image:
    """Scale RGB channels by per-channel gains (default warms the tone)."""
    if any(g <= 0 for g in gains):
        raise ValueError("gains must be positive")
    scaled = image.to_float() * np.asarray(gains, dtype=np.float64)
    return Image(_kernels.round_to_byte(scaled))


def recolor_masked(image: Image, mask, color: tuple) -> Image:
    """Paint every masked pixel with a flat RGB color."""
    m = _mask_array(mask, image)
    out = image.pixels.copy()
    out[m] = np.asarray(color, dtype=np.uint8)
    return Image(out)


def apply_perturbation(image: Image, mask: RegionMask, kind: PerturbKind, seed: int) -> Image:
    if isinstance(kind, Blur):
        return blur_masked(image, mask, kind.kernel)
    return noise_masked(image, mask, kind.sigma, seed)
