"""Image interventions: inpaint sensitive objects, recolor sensitive backgrounds.

Interventions are minimal by contract: pixels outside a sensitive
region's (dilated) mask are never touched, and insensitive regions are
skipped entirely. Intervention failures degrade (with a warning) rather
than abort, because a worse frame is still better than a dead episode.
"""

from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .core import (
    Image,
    PipelineConfig,
    RegionKind,
    RegionMask,
    SensitivityReport,
    derive_rng,
    dilate_mask,
)
from .errors import RecolorExhausted
from .perturb import recolor_masked
from .sensitivity import PolicyBackend, derive_rng_seed, probe_region

log = logging.getLogger(__name__)


class InpaintBackend(Protocol):
    def inpaint(self, image: Image, mask: RegionMask, dilation: int) -> Image: ...


def onion_peel_fill(image: Image, mask: np.ndarray) -> Image:
    """Fill masked pixels layer-by-layer with the mean of filled 8-neighbors.

    The update is layer-synchronous, so the result is independent of pixel
    traversal order. A mask covering the whole image has no seed ring; the
    remainder is filled mid-gray as a last resort.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (image.height, image.width):
        raise ValueError("mask shape does not match image")
    if not mask.any():
        return image
    vals = image.to_float()
    filled = ~mask
    leftover = _kernels.onion_fill(vals, filled)
    if leftover:
        log.warning("onion-peel had no seed pixels; filling %d pixels gray", leftover)
        vals[~filled] = 128.0
    return Image(_kernels.round_to_byte(vals))


def inpaint_object(
    image: Image,
    mask: RegionMask,
    cfg: PipelineConfig,
    backend: InpaintBackend | None = None,
) -> Image:
    """Remove an object region: dilate the mask, then inpaint it.

    With a backend, the backend result is composited under the dilated mask
    (everything outside stays bit-identical); backend failure falls back to
    the built-in onion-peel fill instead of aborting.
    """
    if mask.kind != RegionKind.OBJECT:
        raise ValueError(f"inpaint_object needs an object region, got {mask.kind}")
    mask.require_match(image)
    dilated = dilate_mask(mask, cfg.dilation_radius)
    if backend is not None:
        try:
            result = backend.inpaint(image, mask, cfg.dilation_radius)
            out = image.pixels.copy()
            out[dilated.mask] = result.pixels[dilated.mask]
            return Image(out)
        except Exception:
            log.warning(
                "inpaint backend failed for %r; using onion-peel fill", mask.label,
                exc_info=True,
            )
    return onion_peel_fill(image, dilated.mask)


def neutral_color(seed: int) -> tuple:
    """A random neutral RGB color: HSV saturation <= 0.2, value in [0.4, 0.9].

    The low-saturation bound is re-enforced after byte rounding, so the
    returned bytes always satisfy max-min <= 0.2*max.
    """
    rng = derive_rng(seed, "neutral-color")
    h = float(rng.uniform(0.0, 1.0))
    s = float(rng.uniform(0.0, 0.2))
    v = float(rng.uniform(0.4, 0.9))
    rgb = np.array(colorsys.hsv_to_rgb(h, s, v), dtype=np.float64) * 255.0
    c = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.int64)
    floor_min = int(np.ceil(0.8 * c.max()))
    c = np.maximum(c, floor_min)
    return tuple(int(x) for x in c)


@dataclass
class RecolorSearch:
    image: Image
    color: tuple
    delta: float
    attempts: int
    accepted: bool


def _recolor_search(
    policy: PolicyBackend,
    image: Image,
    region: RegionMask,
    instruction: str,
    cfg: PipelineConfig,
    seed: int,
) -> RecolorSearch:
    best: RecolorSearch | None = None
    for attempt in range(1, cfg.recolor_max_attempts + 1):
        color = neutral_color(derive_rng_seed(seed, "recolor", region.label, attempt))
        candidate = recolor_masked(image, region, color)
        # stability of the new background: candidate vs candidate+noise
        outcome = probe_region(
            policy,
            candidate,
            instruction,
            region,
            cfg,
            derive_rng_seed(seed, "recolor-probe", region.label, attempt),
        )
        result = RecolorSearch(
            image=candidate,
            color=color,
            delta=outcome.delta,
            attempts=attempt,
            accepted=outcome.delta < cfg.tau_background,
        )
        if result.accepted:
            return result
        if best is None or result.delta < best.delta:
            best = result
    assert best is not None
    # report the full attempt count, not the index of the best candidate
    best.attempts = cfg.recolor_max_attempts
    return best


def recolor_until_insensitive(
    policy: PolicyBackend,
    image: Image,
    region: RegionMask,
    instruction: str,
    cfg: PipelineConfig,
    seed: int,
) -> Image:
    """Try fresh neutral colors until the recolored background is stable.

    A color is accepted when the deviation between the recolored image's
    chunks and the recolored-plus-noise image's chunks falls below the
    background threshold. Raises :class:`RecolorExhausted` (carrying the
    best candidate) when no color passes within the attempt cap.
    """
    if region.kind != RegionKind.BACKGROUND:
        raise ValueError(f"recolor needs a background region, got {region.kind}")
    result = _recolor_search(policy, image, region, instruction, cfg, seed)
    if not result.accepted:
        raise RecolorExhausted(
            f"no neutral color accepted for {region.label!r} after "
            f"{result.attempts} attempts (best delta {result.delta:.6f})",
            best_image=result.image,
            best_delta=result.delta,
            attempts=result.attempts,
        )
    return result.image


def apply_interventions(
    policy: PolicyBackend,
    image: Image,
    report: SensitivityReport,
    regions: Sequence[RegionMask],
    instruction: str,
    cfg: PipelineConfig,
    seed: int,
    inpaint_backend: InpaintBackend | None = None,
    color_overrides: dict | None = None,
    audit: list | None = None,
) -> Image:
    """Edit the image for every sensitive region, in report order.

    Objects are inpainted, backgrounds recolored; edits compose on the
    running image. Insensitive regions are skipped. A failed recolor search
    logs a warning and keeps the best candidate. ``color_overrides`` maps
    region labels to previously accepted recolors so cached schedules can
    reapply them without re-probing. Audit entries (one dict per edited
    region) are appended to ``audit`` when given.
    """
    by_label = {m.label: m for m in regions}
    current = image
    for entry in report.entries:
        if not entry.sensitive:
            continue
        region = by_label.get(entry.label)
        if region is None:
            log.warning("report entry %r has no grounded mask this step; skipped", entry.label)
            continue
        record = {
            "region": entry.label,
            "kind": entry.kind.value,
            "delta_before": entry.score,
            "attempts": 0,
            "delta_after": None,
            "action": None,
            "color": None,
        }
        if entry.kind == RegionKind.OBJECT:
            current = inpaint_object(current, region, cfg, backend=inpaint_backend)
            record["action"] = "inpaint"
        else:
            if color_overrides and entry.label in color_overrides:
                color = tuple(color_overrides[entry.label])
                current = recolor_masked(current, region, color)
                record.update(action="recolor_cached", color=list(color))
            else:
                result = _recolor_search(policy, current, region, instruction, cfg, seed)
                if not result.accepted:
                    log.warning(
                        "recolor exhausted for %r after %d attempts; keeping best "
                        "candidate (delta %.6f)",
                        entry.label,
                        result.attempts,
                        result.delta,
                    )
                current = result.image
                record.update(
                    action="recolor" if result.accepted else "recolor_best_effort",
                    attempts=result.attempts,
                    delta_after=result.delta,
                    color=list(result.color),
                )
        if audit is not None:
            audit.append(record)
    return current
