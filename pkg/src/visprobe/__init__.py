"""Run-time visual sensitivity probing and minimal image intervention
for black-box vision-language-action policies."""

from .core import (
    ActionChunk,
    Image,
    PipelineConfig,
    ProbeSchedule,
    RegionKind,
    RegionMask,
    RLESpec,
    SampleMode,
    SensitivityReport,
    WeightVector,
    derive_rng,
    dilate_mask,
    rle_decode,
    rle_encode,
)
from .orchestrator import Method, byovla_step, run_batch, run_episode
from .sensitivity import chunk_deviation, probe_all, probe_region, step_distance

__version__ = "0.1.0"

__all__ = [
    "ActionChunk",
    "Image",
    "PipelineConfig",
    "ProbeSchedule",
    "RegionKind",
    "RegionMask",
    "RLESpec",
    "SampleMode",
    "SensitivityReport",
    "WeightVector",
    "derive_rng",
    "dilate_mask",
    "rle_decode",
    "rle_encode",
    "Method",
    "byovla_step",
    "run_batch",
    "run_episode",
    "chunk_deviation",
    "probe_all",
    "probe_region",
    "step_distance",
    "__version__",
]
