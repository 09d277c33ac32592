"""Gradient-weighted attention attribution baseline.

Consumes already-reduced cross-attention tensors (head-major, task-token
averaged) from a backend, folds attention and gradients into a square
saliency map, and thresholds the top fraction of its value range into a
pixel mask. Keeps the engine free of any autodiff: gradients arrive over
the wire.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .core import RegionKind, RegionMask, ReportEntry, SensitivityReport
from .errors import FlatAttribution, ShapeError

ATTRIBUTION_LABEL = "attribution"


@dataclass(frozen=True)
class AttentionTensors:
    """Cross-attention weights and gradients, one row per head."""

    attn: np.ndarray
    grad: np.ndarray
    layer: int = 0

    def __post_init__(self):
        a = np.asarray(self.attn, dtype=np.float64)
        g = np.asarray(self.grad, dtype=np.float64)
        if a.ndim != 2 or a.shape != g.shape:
            raise ShapeError(f"attention {a.shape} and gradients {g.shape} must match as (H, J)")
        if (a < 0).any():
            raise ShapeError("attention weights must be nonnegative")
        side = math.isqrt(a.shape[1])
        if side * side != a.shape[1]:
            raise ShapeError(f"token count {a.shape[1]} is not a perfect square")
        object.__setattr__(self, "attn", a)
        object.__setattr__(self, "grad", g)

    @property
    def heads(self) -> int:
        return self.attn.shape[0]

    @property
    def tokens(self) -> int:
        return self.attn.shape[1]

    @property
    def side(self) -> int:
        return math.isqrt(self.tokens)


def gradcam_map(t: AttentionTensors) -> np.ndarray:
    """Head-averaged elementwise product grad*attn, reshaped row-major to a square."""
    flat = (t.grad * t.attn).sum(axis=0) / t.heads
    return flat.reshape(t.side, t.side)


def smooth_map(m: np.ndarray, kernel: int) -> np.ndarray:
    """Gaussian-smooth a float map; kernel 1 (or None) is the identity."""
    if not kernel or kernel == 1:
        return np.asarray(m, dtype=np.float64)
    return _kernels.blur_float(np.asarray(m, dtype=np.float64)[..., None], kernel)[..., 0]


def bilinear_upsample(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resize of a 2-D float map."""
    m = np.asarray(m, dtype=np.float64)
    in_h, in_w = m.shape
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = m[y0][:, x0] * (1 - wx) + m[y0][:, x1] * wx
    bot = m[y1][:, x0] * (1 - wx) + m[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def attribution_mask(
    m: np.ndarray,
    image_dims: tuple,
    fraction: float = 0.25,
    smooth_kernel: int = 5,
) -> RegionMask:
    """Pixels in the top ``fraction`` of the smoothed, upsampled map's range.

    The cutoff is min + (1-fraction)*(max-min) over the upsampled values,
    so the mask is invariant to positive affine rescaling of the map.
    Raises :class:`FlatAttribution` when the map has no range at all.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must lie in (0, 1)")
    h, w = image_dims
    up = bilinear_upsample(smooth_map(m, smooth_kernel), h, w)
    lo = float(up.min())
    hi = float(up.max())
    if hi == lo:
        raise FlatAttribution("attribution map is constant; nothing to rank")
    cutoff = lo + (1.0 - fraction) * (hi - lo)
    return RegionMask(
        label=ATTRIBUTION_LABEL,
        kind=RegionKind.OBJECT,
        mask=up >= cutoff,
        score=1.0,
    )


def gradcam_sensitive_regions(
    t: AttentionTensors,
    regions: Sequence[RegionMask],
    overlap_frac: float = 0.5,
    fraction: float = 0.25,
    smooth_kernel: int = 5,
    probed_at: int = 0,
) -> SensitivityReport:
    """Flag regions the attribution mask covers by at least ``overlap_frac``.

    The report has the same shape the probe produces, so the orchestrator
    is method-agnostic. A flat attribution map flags nothing.
    """
    if not regions:
        return SensitivityReport(entries=(), probed_at=probed_at)
    dims = regions[0].mask.shape
    try:
        attr = attribution_mask(
            gradcam_map(t), dims, fraction=fraction, smooth_kernel=smooth_kernel
        )
        attr_mask = attr.mask
    except FlatAttribution:
        attr_mask = np.zeros(dims, dtype=bool)
    entries = []
    for region in regions:
        overlap = float((attr_mask & region.mask).sum()) / float(region.mask.sum())
        entries.append(
            ReportEntry(
                label=region.label,
                kind=region.kind,
                score=overlap,
                threshold=overlap_frac,
                sensitive=overlap >= overlap_frac,
                perturbation=f"gradcam(layer={t.layer})",
            )
        )
    return SensitivityReport(entries=tuple(entries), probed_at=probed_at)
