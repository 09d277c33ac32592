"""Episode orchestration: the per-step intervention pipeline and the run loop.

A method step grounds the cached region proposal on the current
observation, obtains (or reuses) a sensitivity report, and applies
interventions before the observation reaches the policy. Chunks are
requested every ``horizon + 1`` ticks and executed open-loop in between;
gripper commands are binarized at the configured threshold by the
environment.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .core import (
    Image,
    PipelineConfig,
    ProbeSchedule,
    ReportEntry,
    SensitivityReport,
    canonical_json,
)
from .errors import ChunkShapeError
from .intervene import apply_interventions
from .perturb import warm_filter
from .regions import RegionProposal, ground_regions, propose_regions
from .sensitivity import derive_rng_seed, probe_all
from .attribution import gradcam_sensitive_regions
from .testbed import SceneSpec, TestbedEnv, evaluate_success


class Method(str, Enum):
    RAW = "raw"
    BYOVLA = "byovla"
    NOSENS = "nosens"
    GRADCAM = "gradcam"


@dataclass
class EpisodeCache:
    """State carried across steps of one episode."""

    proposal: RegionProposal | None = None
    report: SensitivityReport | None = None
    colors: dict = field(default_factory=dict)


def _cached_flags_report(masks, cached: SensitivityReport, cfg: PipelineConfig, t: int):
    """Re-shape cached sensitivity flags onto freshly grounded masks."""
    entries = []
    for m in masks:
        prev = cached.entry_for(m.label)
        if prev is not None:
            entries.append(
                ReportEntry(
                    label=m.label,
                    kind=m.kind,
                    score=prev.score,
                    threshold=prev.threshold,
                    sensitive=prev.sensitive,
                    perturbation=prev.perturbation,
                )
            )
        else:
            tau = cfg.tau_for(m.kind)
            entries.append(
                ReportEntry(
                    label=m.label,
                    kind=m.kind,
                    score=0.0,
                    threshold=tau,
                    sensitive=tau <= 0.0,
                    perturbation="cached-miss",
                )
            )
    return SensitivityReport(entries=tuple(entries), probed_at=t)


def _assumed_sensitive_report(masks, cfg: PipelineConfig, t: int) -> SensitivityReport:
    entries = tuple(
        ReportEntry(
            label=m.label,
            kind=m.kind,
            score=cfg.tau_for(m.kind),
            threshold=cfg.tau_for(m.kind),
            sensitive=True,
            perturbation="assumed-sensitive",
        )
        for m in masks
    )
    return SensitivityReport(entries=entries, probed_at=t)


def byovla_step(
    suite,
    obs: Image,
    instruction: str,
    cached: EpisodeCache,
    cfg: PipelineConfig,
    seed: int,
    t: int = 0,
    method: Method = Method.BYOVLA,
) -> tuple:
    """One intervention step; returns (edited image, report, audit records).

    The episode-initial proposal must already be in ``cached``. Regions are
    re-grounded on the current observation every step; the probe runs fresh
    when the schedule says so and otherwise reuses the cached flags.
    """
    if cached.proposal is None or cached.proposal.is_empty():
        return obs, SensitivityReport(entries=(), probed_at=t), []
    grounding = ground_regions(
        suite.seg, obs, cached.proposal, cfg.box_threshold, cfg.text_threshold
    )
    masks = grounding.masks
    if not masks:
        return obs, SensitivityReport(entries=(), probed_at=t), []

    probe_fresh = cached.report is None or cfg.probe_schedule == ProbeSchedule.EVERY_CHUNK
    if method == Method.NOSENS:
        report = _assumed_sensitive_report(masks, cfg, t)
    elif method == Method.GRADCAM:
        if probe_fresh:
            tensors = suite.attn.attention(obs, instruction, cfg.attn_layer)
            report = gradcam_sensitive_regions(
                tensors,
                masks,
                overlap_frac=cfg.gradcam_overlap,
                fraction=cfg.gradcam_fraction,
                smooth_kernel=cfg.gradcam_smooth_kernel,
                probed_at=t,
            )
            cached.report = report
        else:
            report = _cached_flags_report(masks, cached.report, cfg, t)
    else:
        if probe_fresh:
            report = probe_all(
                suite.policy,
                obs,
                instruction,
                masks,
                cfg,
                derive_rng_seed(seed, "probe", t),
                probed_at=t,
            )
            cached.report = report
        else:
            report = _cached_flags_report(masks, cached.report, cfg, t)

    audit: list = []
    edited = apply_interventions(
        suite.policy,
        obs,
        report,
        masks,
        instruction,
        cfg,
        derive_rng_seed(seed, "intervene", t),
        inpaint_backend=suite.inpaint,
        color_overrides=cached.colors,
        audit=audit,
    )
    for rec in audit:
        if rec["action"] in ("recolor", "recolor_best_effort") and rec["color"] is not None:
            cached.colors[rec["region"]] = tuple(rec["color"])
    return edited, report, audit


@dataclass
class EpisodeStep:
    t: int
    raw: Image
    edited: Image | None = None
    report: SensitivityReport | None = None
    chunk: list | None = None
    interventions: list = field(default_factory=list)


@dataclass
class EpisodeLog:
    instruction: str
    method: str
    seed: int
    config_hash: str
    success: bool
    failure_mode: str
    steps: list
    trajectory: list

    def edited_labels(self) -> set:
        out = set()
        for s in self.steps:
            for rec in s.interventions:
                out.add(rec["region"])
        return out

    def to_json_dict(self) -> dict:
        return {
            "schema": "episode/1",
            "instruction": self.instruction,
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "success": self.success,
            "failure_mode": self.failure_mode,
            "steps": [
                {
                    "t": s.t,
                    "raw": f"frames/{s.t:04d}_raw.png" if s.raw is not None else None,
                    "edited": f"frames/{s.t:04d}_edited.png" if s.edited is not None else None,
                    "report": s.report.to_json_dict() if s.report is not None else None,
                    "chunk": s.chunk,
                    "interventions": s.interventions,
                }
                for s in self.steps
            ],
            "trajectory": self.trajectory,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_json_dict())

    def save(self, ep_dir) -> None:
        ep_dir = Path(ep_dir)
        frames = ep_dir / "frames"
        frames.mkdir(parents=True, exist_ok=True)
        for s in self.steps:
            if s.raw is not None:
                s.raw.save(frames / f"{s.t:04d}_raw.png")
            if s.edited is not None:
                s.edited.save(frames / f"{s.t:04d}_edited.png")
        (ep_dir / "log.json").write_text(self.to_json())
        # intervention audit as JSON lines, one edited region per line
        lines = []
        for s in self.steps:
            for rec in s.interventions:
                lines.append(canonical_json({"t": s.t, **rec}))
        if lines:
            (ep_dir / "interventions.jsonl").write_text("\n".join(lines) + "\n")


def run_episode(
    scene: SceneSpec,
    suite,
    cfg: PipelineConfig,
    method: Method,
    seed: int,
    record_frames: bool = True,
) -> EpisodeLog:
    """Roll one episode in the testbed environment.

    ``record_frames`` keeps raw/edited images in the returned log (needed
    for minimality checks and for saving); turn it off for bulk statistics.
    """
    method = Method(method)
    env = TestbedEnv(scene, gripper_threshold=cfg.gripper_threshold)
    obs = env.reset(seed)
    if cfg.warm_gains:
        obs = warm_filter(obs, cfg.warm_gains)
    cache = EpisodeCache()
    if method != Method.RAW:
        cache.proposal = propose_regions(suite.vlm, obs, scene.instruction)
    chunk_len = cfg.horizon + 1
    steps: list[EpisodeStep] = []
    chunk = None
    edited = None
    report = None
    audit: list = []
    t = 0
    done = False
    while not done:
        chunk_tick = t % chunk_len == 0
        if chunk_tick:
            if method == Method.RAW:
                edited, report, audit = obs, None, []
            else:
                edited, report, audit = byovla_step(
                    suite, obs, scene.instruction, cache, cfg, seed, t=t, method=method
                )
            chunk = suite.policy.predict(edited, scene.instruction, 1)[0]
            if len(chunk) != chunk_len:
                raise ChunkShapeError(
                    f"policy emits {len(chunk)}-step chunks, config expects {chunk_len}"
                )
        steps.append(
            EpisodeStep(
                t=t,
                raw=obs if record_frames else None,
                edited=(edited if (chunk_tick and record_frames and method != Method.RAW) else None),
                report=report if chunk_tick else None,
                chunk=chunk.to_lists() if chunk_tick else None,
                interventions=audit if chunk_tick else [],
            )
        )
        obs, done = env.step(chunk.steps[t % chunk_len])
        if cfg.warm_gains:
            obs = warm_filter(obs, cfg.warm_gains)
        t += 1
    success, failure_mode = evaluate_success(env.trajectory, scene, env.delivered)
    return EpisodeLog(
        instruction=scene.instruction,
        method=method.value,
        seed=seed,
        config_hash=cfg.config_hash(),
        success=success,
        failure_mode=failure_mode,
        steps=steps,
        trajectory=env.trajectory,
    )


def episode_seeds(base_seed: int, episodes: int) -> list:
    return [derive_rng_seed(base_seed, "episode", i) for i in range(episodes)]


def _run_one_to_dir(args) -> dict:
    scene_dict, cfg_dict, method, seed, ep_dir, record_frames = args
    from .backends.clients import local_testbed_suite

    scene = SceneSpec.from_json_dict(scene_dict)
    cfg = PipelineConfig.from_json_dict(cfg_dict)
    suite = local_testbed_suite(scene, seed=0)
    log = run_episode(scene, suite, cfg, Method(method), seed, record_frames=record_frames)
    if ep_dir is not None:
        log.save(ep_dir)
    return {"success": log.success, "failure_mode": log.failure_mode, "seed": seed}


def run_batch(
    scene: SceneSpec,
    cfg: PipelineConfig,
    method: Method,
    episodes: int,
    base_seed: int,
    out_dir=None,
    workers: int = 1,
    record_frames: bool = True,
) -> list:
    """Run a batch of seeded episodes against fresh stub suites.

    Episodes run in parallel workers when ``workers > 1``; per-episode
    directories are written independently, so results do not depend on
    completion order.
    """
    seeds = episode_seeds(base_seed, episodes)
    jobs = []
    for i, seed in enumerate(seeds):
        ep_dir = str(Path(out_dir) / f"ep_{i}") if out_dir is not None else None
        jobs.append((scene.to_json_dict(), cfg.to_json_dict(), Method(method).value, seed, ep_dir, record_frames))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one_to_dir, jobs))
    return [_run_one_to_dir(j) for j in jobs]


def summarize_runs(runs_dir) -> dict:
    """Aggregate per-method success rates and failure-mode counts.

    Expects ``<runs_dir>/<method>/ep_*/log.json`` (the layout ``visprobe
    run`` writes).
    """
    runs_dir = Path(runs_dir)
    summary: dict = {}
    for method_dir in sorted(p for p in runs_dir.iterdir() if p.is_dir()):
        logs = sorted(method_dir.glob("ep_*/log.json"))
        if not logs:
            continue
        successes = 0
        modes: dict = {}
        for lf in logs:
            d = json.loads(lf.read_text())
            if d["success"]:
                successes += 1
            else:
                modes[d["failure_mode"]] = modes.get(d["failure_mode"], 0) + 1
        summary[method_dir.name] = {
            "successes": successes,
            "trials": len(logs),
            "rate": successes / len(logs),
            "failure_modes": dict(sorted(modes.items())),
        }
    return summary


def summary_to_csv(summary: dict) -> str:
    lines = ["method,successes,trials,rate"]
    for method in sorted(summary):
        s = summary[method]
        lines.append(f"{method},{s['successes']},{s['trials']},{s['rate']:.4f}")
    return "\n".join(lines) + "\n"
