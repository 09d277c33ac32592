"""Shared data model: images, region masks, action chunks, config, RLE, RNG.

Every value type here is immutable after construction (arrays are marked
read-only), so instances can be shared freely across threads. All
randomness anywhere in the engine is drawn from the counter-based Philox
generator returned by :func:`derive_rng`, keyed by a user seed plus a
stream label; identical seeds and inputs therefore reproduce identical
bytes everywhere.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage

from . import _kernels
from .errors import MalformedRLE

TRANSLATION_ONLY = (1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)

ACTION_DIM = 7
GRIPPER_COL = 6


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Philox generator for the named stream of a root seed.

    The 128-bit Philox key is a SHA-256 digest of the seed and the stream
    labels, so distinct labels give statistically independent streams and
    the same (seed, labels) always replays the same sequence.
    """
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for lab in labels:
        h.update(b"\x1f")
        h.update(str(lab).encode("utf-8"))
    key = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


class RegionKind(str, Enum):
    OBJECT = "object"
    BACKGROUND = "background"


class ProbeSchedule(str, Enum):
    INIT_ONLY = "init_only"
    EVERY_CHUNK = "every_chunk"


class SampleMode(str, Enum):
    K_ACTIONS = "k_actions"
    K_OBSERVATIONS = "k_observations"


@dataclass(frozen=True)
class Image:
    """An RGB observation: uint8 pixels of shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"image pixels must be uint8, got {px.dtype}")
        object.__setattr__(self, "pixels", _freeze(px.copy()))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_float(self) -> np.ndarray:
        """Writable float64 copy of the pixel data."""
        return self.pixels.astype(np.float64)

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        # compress_level pinned so encodes are reproducible and fast
        PILImage.fromarray(self.pixels, mode="RGB").save(buf, format="PNG", compress_level=1)
        return buf.getvalue()

    @staticmethod
    def from_png(data: bytes) -> "Image":
        with PILImage.open(io.BytesIO(data)) as im:
            return Image(np.asarray(im.convert("RGB"), dtype=np.uint8))

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_png())

    @staticmethod
    def load(path) -> "Image":
        with open(path, "rb") as f:
            return Image.from_png(f.read())

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.height, self.width, self.pixels.tobytes()))


@dataclass(frozen=True)
class RegionMask:
    """A labeled boolean pixel region bound to one image's dimensions."""

    label: str
    kind: RegionKind
    mask: np.ndarray
    score: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {m.shape}")
        if m.dtype != bool:
            m = m.astype(bool)
        if not m.any():
            raise ValueError(f"mask for {self.label!r} has no true pixels")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "mask", _freeze(m.copy()))
        object.__setattr__(self, "kind", RegionKind(self.kind))

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RegionMask)
            and self.label == other.label
            and self.kind == other.kind
            and self.score == other.score
            and np.array_equal(self.mask, other.mask)
        )

    def __hash__(self):
        return hash((self.label, self.kind, self.score, self.mask.tobytes()))

    def matches(self, image: Image) -> bool:
        return self.mask.shape == (image.height, image.width)

    def require_match(self, image: Image) -> None:
        if not self.matches(image):
            raise ValueError(
                f"mask {self.label!r} is {self.mask.shape}, image is "
                f"{(image.height, image.width)}"
            )

    def pixel_count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class ActionChunk:
    """L consecutive actions: columns are dx, dy, dz [m], droll, dpitch, dyaw
    [rad], gripper in [0, 1]."""

    steps: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.steps, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != ACTION_DIM:
            raise ValueError(f"chunk must be (L, {ACTION_DIM}), got {s.shape}")
        if s.shape[0] < 1:
            raise ValueError("chunk must contain at least one step")
        if not np.isfinite(s).all():
            raise ValueError("chunk contains non-finite entries")
        g = s[:, GRIPPER_COL]
        if (g < 0).any() or (g > 1).any():
            raise ValueError("gripper column must lie in [0, 1]")
        object.__setattr__(self, "steps", _freeze(s.copy()))

    def __len__(self) -> int:
        return self.steps.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, ActionChunk) and np.array_equal(self.steps, other.steps)

    def __hash__(self):
        return hash(self.steps.tobytes())

    def to_lists(self) -> list:
        return self.steps.tolist()

    @staticmethod
    def from_lists(rows: Sequence[Sequence[float]]) -> "ActionChunk":
        return ActionChunk(np.asarray(rows, dtype=np.float64))


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-component action weights for the deviation norm."""

    values: np.ndarray = field(default_factory=lambda: np.array(TRANSLATION_ONLY))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (ACTION_DIM,):
            raise ValueError(f"weights must have shape ({ACTION_DIM},), got {v.shape}")
        if (v < 0).any():
            raise ValueError("weights must be nonnegative")
        if not (v > 0).any():
            raise ValueError("weights must not all be zero")
        object.__setattr__(self, "values", _freeze(v.copy()))

    @staticmethod
    def translational() -> "WeightVector":
        return WeightVector(np.array(TRANSLATION_ONLY))

    def scaled(self, c: float) -> "WeightVector":
        return WeightVector(self.values * c)

    def __eq__(self, other) -> bool:
        return isinstance(other, WeightVector) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True)
class ReportEntry:
    label: str
    kind: RegionKind
    score: float
    threshold: float
    sensitive: bool
    perturbation: str

    def __post_init__(self):
        object.__setattr__(self, "kind", RegionKind(self.kind))
        if self.score < 0:
            raise ValueError("deviation score must be >= 0")
        if self.sensitive != (self.score >= self.threshold):
            raise ValueError(
                f"entry {self.label!r}: sensitive flag must equal score >= threshold"
            )


REPORT_SCHEMA_ID = "probe/1"


@dataclass(frozen=True)
class SensitivityReport:
    """Per-region deviation scores and intervention flags for one observation."""

    entries: tuple
    probed_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def sensitive_labels(self) -> list[str]:
        return [e.label for e in self.entries if e.sensitive]

    def entry_for(self, label: str) -> ReportEntry | None:
        for e in self.entries:
            if e.label == label:
                return e
        return None

    def to_json_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA_ID,
            "probed_at": self.probed_at,
            "entries": [
                {
                    "label": e.label,
                    "kind": e.kind.value,
                    "score": e.score,
                    "threshold": e.threshold,
                    "sensitive": e.sensitive,
                    "perturbation": e.perturbation,
                }
                for e in self.entries
            ],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "SensitivityReport":
        if d.get("schema") != REPORT_SCHEMA_ID:
            raise ValueError(f"unsupported report schema: {d.get('schema')!r}")
        entries = tuple(
            ReportEntry(
                label=e["label"],
                kind=RegionKind(e["kind"]),
                score=float(e["score"]),
                threshold=float(e["threshold"]),
                sensitive=bool(e["sensitive"]),
                perturbation=e["perturbation"],
            )
            for e in d["entries"]
        )
        return SensitivityReport(entries=entries, probed_at=int(d["probed_at"]))

    def to_json(self) -> str:
        return canonical_json(self.to_json_dict())


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable parameters of the whole intervention pipeline.

    Defaults follow the deployed configuration: 5 policy samples, action
    horizon 3 (chunks of 4 steps), blur kernel 25, noise sigma sqrt(0.075)
    on the [0, 1] intensity scale, thresholds 2 mm for object regions and
    1 mm for backgrounds, mask dilation 10 px.
    """

    k_samples: int = 5
    horizon: int = 3
    weights: WeightVector = field(default_factory=WeightVector.translational)
    tau_object: float = 0.002
    tau_background: float = 0.001
    blur_kernel: int = 25
    noise_sigma: float = math.sqrt(0.075)
    dilation_radius: int = 10
    probe_schedule: ProbeSchedule = ProbeSchedule.INIT_ONLY
    sample_mode: SampleMode = SampleMode.K_ACTIONS
    recolor_max_attempts: int = 10
    rng_seed: int = 0
    # deviation normalization: divide by K*(horizon+1) instead of the
    # literal K*horizon when True
    normalized_deviation: bool = False
    box_threshold: float = 0.4
    text_threshold: float = 0.4
    gripper_threshold: float = 0.7
    max_inflight: int = 1
    warm_gains: tuple | None = None
    gradcam_fraction: float = 0.25
    gradcam_smooth_kernel: int = 5
    gradcam_overlap: float = 0.5
    attn_layer: int = 6

    def __post_init__(self):
        if self.k_samples < 1:
            raise ValueError("k_samples must be >= 1")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError("blur_kernel must be odd and positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.tau_object < 0 or self.tau_background < 0:
            raise ValueError("thresholds must be >= 0")
        if self.dilation_radius < 0:
            raise ValueError("dilation_radius must be >= 0")
        if self.recolor_max_attempts < 1:
            raise ValueError("recolor_max_attempts must be >= 1")
        object.__setattr__(self, "probe_schedule", ProbeSchedule(self.probe_schedule))
        object.__setattr__(self, "sample_mode", SampleMode(self.sample_mode))
        if self.warm_gains is not None:
            object.__setattr__(self, "warm_gains", tuple(float(g) for g in self.warm_gains))

    def tau_for(self, kind: RegionKind) -> float:
        return self.tau_object if kind == RegionKind.OBJECT else self.tau_background

    def with_(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)

    def to_json_dict(self) -> dict:
        return {
            "k_samples": self.k_samples,
            "horizon": self.horizon,
            "weights": self.weights.values.tolist(),
            "tau_object": self.tau_object,
            "tau_background": self.tau_background,
            "blur_kernel": self.blur_kernel,
            "noise_sigma": self.noise_sigma,
            "dilation_radius": self.dilation_radius,
            "probe_schedule": self.probe_schedule.value,
            "sample_mode": self.sample_mode.value,
            "recolor_max_attempts": self.recolor_max_attempts,
            "rng_seed": self.rng_seed,
            "normalized_deviation": self.normalized_deviation,
            "box_threshold": self.box_threshold,
            "text_threshold": self.text_threshold,
            "gripper_threshold": self.gripper_threshold,
            "max_inflight": self.max_inflight,
            "warm_gains": list(self.warm_gains) if self.warm_gains else None,
            "gradcam_fraction": self.gradcam_fraction,
            "gradcam_smooth_kernel": self.gradcam_smooth_kernel,
            "gradcam_overlap": self.gradcam_overlap,
            "attn_layer": self.attn_layer,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "PipelineConfig":
        kw = dict(d)
        if "weights" in kw:
            kw["weights"] = WeightVector(np.asarray(kw["weights"], dtype=np.float64))
        if kw.get("warm_gains"):
            kw["warm_gains"] = tuple(kw["warm_gains"])
        return PipelineConfig(**kw)

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json_dict()).encode()).hexdigest()[:16]


def canonical_json(obj) -> str:
    """Deterministic JSON used for hashing, transcripts, and golden files."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# Run-length mask encoding (wire format {"w": int, "h": int, "runs": [...]})
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RLESpec:
    """Row-major run lengths, alternating false/true and starting with false."""

    width: int
    height: int
    runs: tuple

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))

    def to_json_dict(self) -> dict:
        return {"w": self.width, "h": self.height, "runs": list(self.runs)}

    @staticmethod
    def from_json_dict(d: dict) -> "RLESpec":
        try:
            return RLESpec(width=int(d["w"]), height=int(d["h"]), runs=tuple(d["runs"]))
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedRLE(f"bad RLE object: {e}") from e


def rle_encode(mask) -> RLESpec:
    """Encode a boolean mask (``RegionMask`` or bare (H, W) bool array)."""
    m = mask.mask if isinstance(mask, RegionMask) else np.asarray(mask, dtype=bool)
    h, w = m.shape
    flat = m.ravel()
    runs: list[int] = []
    # run boundaries via diff over the flat bit string
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    lengths = np.diff(bounds)
    if flat[0]:
        runs.append(0)
    runs.extend(int(x) for x in lengths)
    return RLESpec(width=w, height=h, runs=tuple(runs))


def rle_decode(spec: RLESpec) -> np.ndarray:
    """Decode to a bare boolean array; raises :class:`MalformedRLE` on bad sums."""
    total = spec.width * spec.height
    if any(r < 0 for r in spec.runs):
        raise MalformedRLE("negative run length")
    if sum(spec.runs) != total:
        raise MalformedRLE(
            f"runs sum to {sum(spec.runs)}, expected {total} for "
            f"{spec.width}x{spec.height}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for r in spec.runs:
        if value:
            flat[pos : pos + r] = True
        pos += r
        value = not value
    return flat.reshape(spec.height, spec.width)


def rle_decode_mask(spec: RLESpec, label: str, kind: RegionKind, score: float = 1.0) -> RegionMask:
    return RegionMask(label=label, kind=kind, mask=rle_decode(spec), score=score)


def dilate_mask(mask: RegionMask, radius: int) -> RegionMask:
    """Grow a mask by a Chebyshev radius (square structuring element)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask
    return RegionMask(
        label=mask.label,
        kind=mask.kind,
        mask=_kernels.dilate_bool(mask.mask, radius),
        score=mask.score,
    )


def masks_disjoint(masks: Iterable[RegionMask]) -> bool:
    masks = list(masks)
    if not masks:
        return True
    acc = np.zeros_like(masks[0].mask, dtype=np.int32)
    for m in masks:
        acc += m.mask
    return int(acc.max()) <= 1
