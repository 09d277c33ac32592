"""Offline sensitivity-threshold calibration.

Probes every annotated task-irrelevant region in a dataset of first
observations with the kind-appropriate perturbation and a translational
weight vector, then takes the third quartile of the deviation samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .core import (
    Image,
    PipelineConfig,
    RegionKind,
    RLESpec,
    WeightVector,
    canonical_json,
    rle_decode_mask,
    rle_encode,
)
from .errors import EmptyCalibrationSet
from .sensitivity import PolicyBackend, derive_rng_seed, probe_region


def quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile at rank (n-1)*q over the sorted values."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    vals = sorted(float(v) for v in values)
    if not vals:
        raise EmptyCalibrationSet("cannot take a quantile of no samples")
    rank = (len(vals) - 1) * q
    lo = math.floor(rank)
    hi = math.ceil(rank)
    if lo == hi:
        return vals[lo]
    return vals[lo] + (rank - lo) * (vals[hi] - vals[lo])


@dataclass(frozen=True)
class CalibrationSample:
    env_id: str
    label: str
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("deviation must be >= 0")


@dataclass(frozen=True)
class CalibrationEnv:
    env_id: str
    image: Image
    instruction: str
    regions: tuple


@dataclass(frozen=True)
class CalibrationReport:
    kind: RegionKind
    tau: float
    samples: tuple

    def to_json_dict(self) -> dict:
        return {
            "schema": "calibration/1",
            "kind": self.kind.value,
            "tau": self.tau,
            "samples": [
                {"env": s.env_id, "label": s.label, "delta": s.delta} for s in self.samples
            ],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_json_dict())


def calibrate_threshold(
    policy: PolicyBackend,
    dataset: Sequence[CalibrationEnv],
    cfg: PipelineConfig,
    kind: RegionKind,
    seed: int,
) -> CalibrationReport:
    """Third-quartile deviation over every (environment, region) pair.

    One sample per region of the requested kind; the weight vector is
    forced to the translational indicator. Per-sample probe seeds derive
    from (environment, label), so dataset order does not matter.
    """
    if not dataset:
        raise EmptyCalibrationSet("calibration needs at least one environment")
    probe_cfg = cfg.with_(weights=WeightVector.translational())
    samples: list[CalibrationSample] = []
    for env in dataset:
        for region in env.regions:
            if region.kind != kind:
                continue
            outcome = probe_region(
                policy,
                env.image,
                env.instruction,
                region,
                probe_cfg,
                derive_rng_seed(seed, "calibrate", env.env_id, region.label),
            )
            samples.append(
                CalibrationSample(env_id=env.env_id, label=region.label, delta=outcome.delta)
            )
    if not samples:
        raise EmptyCalibrationSet(f"no {kind.value} regions grounded in the dataset")
    tau = quantile([s.delta for s in samples], 0.75)
    ordered = tuple(sorted(samples, key=lambda s: (s.env_id, s.label)))
    return CalibrationReport(kind=kind, tau=tau, samples=ordered)


def load_calibration_dir(path) -> list:
    """Load a calibration dataset directory.

    Layout: one subdirectory per environment containing ``obs.png`` and
    ``meta.json`` with ``{"instruction": ..., "regions": [{"label", "kind",
    "rle"}]}``.
    """
    root = Path(path)
    envs = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        meta = json.loads((sub / "meta.json").read_text())
        image = Image.load(sub / "obs.png")
        regions = tuple(
            rle_decode_mask(
                RLESpec.from_json_dict(r["rle"]),
                label=r["label"],
                kind=RegionKind(r["kind"]),
            )
            for r in meta["regions"]
        )
        envs.append(
            CalibrationEnv(
                env_id=sub.name, image=image, instruction=meta["instruction"], regions=regions
            )
        )
    if not envs:
        raise EmptyCalibrationSet(f"no environment directories under {root}")
    return envs


def save_calibration_env(root, env: CalibrationEnv) -> None:
    """Write one environment in the calibration directory layout."""
    sub = Path(root) / env.env_id
    sub.mkdir(parents=True, exist_ok=True)
    env.image.save(sub / "obs.png")
    meta = {
        "instruction": env.instruction,
        "regions": [
            {"label": r.label, "kind": r.kind.value, "rle": rle_encode(r).to_json_dict()}
            for r in env.regions
        ],
    }
    (sub / "meta.json").write_text(json.dumps(meta, indent=2))
