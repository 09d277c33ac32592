"""Action-deviation scoring and the per-region sensitivity probe.

The probe perturbs one task-irrelevant region at a time, samples action
chunks for the original and perturbed observations, and scores the
average weighted L2 deviation per chunk step. A region is flagged
sensitive when its deviation reaches the threshold for its kind.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .core import (
    ActionChunk,
    Image,
    PipelineConfig,
    RegionMask,
    ReportEntry,
    SampleMode,
    SensitivityReport,
    WeightVector,
    derive_rng,
)
from .errors import BackendUnavailable, ChunkShapeError, DegenerateHorizon
from .perturb import Blur, Noise, apply_perturbation, kind_for_region

# Odd blur kernels admissible when sampling K perturbed observations.
KOBS_KERNEL_CHOICES = tuple(range(15, 31, 2))


class PolicyBackend(Protocol):
    """Anything that maps (observation, instruction) to k action chunks."""

    def predict(self, image: Image, instruction: str, k: int) -> list[ActionChunk]: ...


def step_distance(a: np.ndarray, b: np.ndarray, weights: WeightVector | np.ndarray) -> float:
    """Weighted L2 distance between two single actions: sqrt(sum_i w_i (a_i - b_i)^2)."""
    w = weights.values if isinstance(weights, WeightVector) else np.asarray(weights)
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(math.sqrt(float(np.dot(w, d * d))))


def chunk_deviation(
    orig: Sequence[ActionChunk],
    pert: Sequence[ActionChunk],
    weights: WeightVector,
    horizon: int,
    *,
    normalized: bool = False,
) -> float:
    """Average weighted deviation between paired chunk samples.

    Sums the per-step distance over all ``horizon + 1`` steps of every
    chunk pair and divides by ``K * horizon`` (the literal normalization;
    note one more summand than the divisor counts). With ``normalized=True``
    the divisor is ``K * (horizon + 1)`` instead; a zero horizon requires
    it, since the literal divisor would be zero.
    """
    if len(orig) != len(pert) or not orig:
        raise ChunkShapeError(
            f"need equal nonempty sample lists, got {len(orig)} vs {len(pert)}"
        )
    expected_len = horizon + 1
    for c in list(orig) + list(pert):
        if len(c) != expected_len:
            raise ChunkShapeError(
                f"chunk has {len(c)} steps, expected horizon+1 = {expected_len}"
            )
    if horizon == 0 and not normalized:
        raise DegenerateHorizon(
            "horizon 0 has no literal normalization; use normalized=True"
        )
    k = len(orig)
    total = 0.0
    for co, cp in zip(orig, pert):
        for t in range(expected_len):
            total += step_distance(co.steps[t], cp.steps[t], weights)
    divisor = k * (expected_len if normalized else horizon)
    return total / divisor


def _deviation(orig, pert, cfg: PipelineConfig) -> float:
    # auto-switch to the normalized divisor for non-chunking policies
    normalized = cfg.normalized_deviation or cfg.horizon == 0
    return chunk_deviation(orig, pert, cfg.weights, cfg.horizon, normalized=normalized)


@dataclass(frozen=True)
class ProbeOutcome:
    label: str
    delta: float
    samples_used: int
    chunk_len: int

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("deviation must be >= 0")


def nominal_chunk_count(cfg: PipelineConfig) -> int:
    """Chunks requested for the unperturbed observation, shared across regions."""
    return cfg.k_samples if cfg.sample_mode == SampleMode.K_ACTIONS else 1


def request_nominal(
    policy: PolicyBackend, obs: Image, instruction: str, cfg: PipelineConfig
) -> list[ActionChunk]:
    return policy.predict(obs, instruction, nominal_chunk_count(cfg))


def probe_region(
    policy: PolicyBackend,
    obs: Image,
    instruction: str,
    region: RegionMask,
    cfg: PipelineConfig,
    seed: int,
    nominal: list[ActionChunk] | None = None,
) -> ProbeOutcome:
    """Score one region's influence on the policy output.

    ``k_actions`` mode applies a single perturbation and samples K chunks
    from each of the original and perturbed observations. ``k_observations``
    mode draws K independently perturbed observations (blur kernels sampled
    from the odd sizes in [15, 30]; noise redrawn per sample), requests one
    chunk per observation, and pairs each against one nominal chunk.
    """
    region.require_match(obs)
    base_kind = kind_for_region(region.kind, cfg)
    try:
        if nominal is None:
            nominal = request_nominal(policy, obs, instruction, cfg)
        if cfg.sample_mode == SampleMode.K_ACTIONS:
            perturbed_obs = apply_perturbation(
                obs, region, base_kind, derive_rng_seed(seed, "perturb", region.label)
            )
            pert = policy.predict(perturbed_obs, instruction, cfg.k_samples)
            orig = nominal
        else:
            rng = derive_rng(seed, "kobs", region.label)
            orig, pert = [], []
            for k in range(cfg.k_samples):
                if isinstance(base_kind, Blur):
                    kind = Blur(int(rng.choice(np.array(KOBS_KERNEL_CHOICES))))
                else:
                    kind = Noise(base_kind.sigma)
                obs_k = apply_perturbation(
                    obs, region, kind, derive_rng_seed(seed, "kobs", region.label, k)
                )
                pert.extend(policy.predict(obs_k, instruction, 1))
                orig.append(nominal[0])
    except BackendUnavailable as e:
        raise BackendUnavailable(str(e), region=region.label) from e
    delta = _deviation(orig, pert, cfg)
    return ProbeOutcome(
        label=region.label,
        delta=delta,
        samples_used=cfg.k_samples,
        chunk_len=len(orig[0]),
    )


def derive_rng_seed(seed: int, *labels) -> int:
    """Collapse a derived stream to a plain int seed for APIs that take one."""
    return int(derive_rng(seed, *labels).integers(0, 2**63 - 1))


def probe_all(
    policy: PolicyBackend,
    obs: Image,
    instruction: str,
    regions: Sequence[RegionMask],
    cfg: PipelineConfig,
    seed: int,
    probed_at: int = 0,
) -> SensitivityReport:
    """Probe every region against a shared set of nominal chunks.

    The nominal chunks are requested once and reused for all regions.
    Regions may be probed concurrently (``cfg.max_inflight``); entries are
    merged in region order so the report is deterministic either way.
    """
    nominal = request_nominal(policy, obs, instruction, cfg)

    def one(region: RegionMask) -> ReportEntry:
        outcome = probe_region(policy, obs, instruction, region, cfg, seed, nominal=nominal)
        tau = cfg.tau_for(region.kind)
        return ReportEntry(
            label=region.label,
            kind=region.kind,
            score=outcome.delta,
            threshold=tau,
            sensitive=outcome.delta >= tau,
            perturbation=kind_for_region(region.kind, cfg).describe(),
        )

    if cfg.max_inflight > 1 and len(regions) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_inflight) as pool:
            entries = list(pool.map(one, regions))
    else:
        entries = [one(r) for r in regions]
    return SensitivityReport(entries=tuple(entries), probed_at=probed_at)
