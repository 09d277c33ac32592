"""Command-line interface.

Subcommands: ``calibrate`` (offline threshold from a dataset directory),
``probe`` (one-shot sensitivity report for an observation), ``run``
(batches of testbed episodes per method), ``report`` (success-rate summary
over run directories), and ``fixtures`` (emit the bundled datasets).
Errors exit nonzero with a one-line JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backends.clients import local_testbed_suite, suite_from_transport
from .backends.transports import HTTPTransport, SubprocessTransport
from .calibrate import calibrate_threshold, load_calibration_dir, save_calibration_env, CalibrationEnv
from .core import Image, PipelineConfig, RegionKind, canonical_json
from .orchestrator import Method, run_batch, summarize_runs, summary_to_csv
from .regions import ground_regions, propose_regions
from .scenes import make_engineered_calibration, make_standard_scene
from .sensitivity import probe_all
from .testbed import SceneSpec, SimPolicy, render


def _load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_json_dict(json.loads(Path(path).read_text()))


def _load_scene(spec: str) -> SceneSpec:
    if spec == "standard":
        return make_standard_scene()
    if spec == "standard-notile":
        return make_standard_scene(with_tile=False)
    if spec == "nominal":
        return make_standard_scene().without_distractions()
    return SceneSpec.load(spec)


def _suite_from_spec(path, cfg: PipelineConfig):
    """Build a backend suite from a backends JSON file.

    ``{"transport": "stub-scene", "scene": ..., "seed": 0}`` wires the
    in-process testbed stubs; ``subprocess`` and ``http`` reach external
    protocol servers.
    """
    spec = json.loads(Path(path).read_text())
    kind = spec.get("transport", "stub-scene")
    if kind == "stub-scene":
        scene = _load_scene(spec.get("scene", "standard"))
        return local_testbed_suite(scene, seed=int(spec.get("seed", 0)))
    if kind == "subprocess":
        return suite_from_transport(
            SubprocessTransport(spec["argv"]),
            timeout_ms=int(spec.get("timeout_ms", 30000)),
            retries=int(spec.get("retries", 0)),
        )
    if kind == "http":
        return suite_from_transport(
            HTTPTransport(spec["url"]),
            timeout_ms=int(spec.get("timeout_ms", 30000)),
            retries=int(spec.get("retries", 0)),
        )
    raise ValueError(f"unknown backends transport {kind!r}")


def cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    dataset = load_calibration_dir(args.dataset)
    policy_path = Path(args.dataset) / "policy_scene.json"
    suite = None
    if args.backends:
        suite = _suite_from_spec(args.backends, cfg)
        policy = suite.policy
    elif policy_path.exists():
        policy = SimPolicy.from_scene(SceneSpec.load(policy_path))
    else:
        raise FileNotFoundError(
            f"no --backends given and {policy_path} not found in the dataset"
        )
    try:
        kind = RegionKind.OBJECT if args.kind == "object" else RegionKind.BACKGROUND
        report = calibrate_threshold(policy, dataset, cfg, kind, seed=args.seed)
    finally:
        if suite is not None:
            suite.close()
    Path(args.out).write_text(report.to_json())
    print(f"tau[{args.kind}] = {report.tau:.6f} m over {len(report.samples)} samples")
    return 0


def cmd_probe(args) -> int:
    cfg = _load_config(args.config)
    suite = _suite_from_spec(args.backends, cfg)
    try:
        image = Image.load(args.image)
        proposal = propose_regions(suite.vlm, image, args.instruction)
        grounding = ground_regions(
            suite.seg, image, proposal, cfg.box_threshold, cfg.text_threshold
        )
        report = probe_all(
            suite.policy, image, args.instruction, grounding.masks, cfg, seed=args.seed
        )
    finally:
        suite.close()
    Path(args.out).write_text(report.to_json())
    flagged = report.sensitive_labels()
    print(f"probed {len(report.entries)} regions; sensitive: {flagged or 'none'}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    scene = _load_scene(args.env)
    out = Path(args.out) / args.method
    out.mkdir(parents=True, exist_ok=True)
    if args.episodes == 0:
        print("warning: --episodes 0, nothing to run", file=sys.stderr)
        return 0
    results = run_batch(
        scene,
        cfg,
        Method(args.method),
        args.episodes,
        args.seed,
        out_dir=out,
        workers=args.workers,
        record_frames=not args.no_frames,
    )
    successes = sum(r["success"] for r in results)
    print(f"{args.method}: {successes}/{len(results)} episodes succeeded -> {out}")
    return 0


def cmd_report(args) -> int:
    summary = summarize_runs(args.runs)
    doc = {"schema": "summary/1", "methods": summary}
    out = Path(args.out)
    if out.suffix == ".csv":
        out.write_text(summary_to_csv(summary))
    elif out.suffix == ".json":
        out.write_text(canonical_json(doc))
    else:
        out.with_suffix(".json").write_text(canonical_json(doc))
        out.with_suffix(".csv").write_text(summary_to_csv(summary))
    for method, s in sorted(summary.items()):
        print(f"{method}: {s['successes']}/{s['trials']} ({100 * s['rate']:.0f}%)")
    return 0


def cmd_fixtures(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "calibration":
        policy_scene, envs = make_engineered_calibration()
        policy_scene.save(out / "policy_scene.json")
        for env_scene in envs:
            img, masks = render(env_scene)
            label = next(d.label for d in env_scene.distractors if d.present)
            save_calibration_env(
                out,
                CalibrationEnv(
                    env_id=env_scene.name,
                    image=img,
                    instruction=env_scene.instruction,
                    regions=(masks[label],),
                ),
            )
        print(f"wrote {len(envs)} calibration environments to {out}")
    else:
        scene = make_standard_scene()
        scene.save(out / "standard_scene.json")
        img, masks = render(scene)
        img.save(out / "standard_obs.png")
        print(f"wrote standard scene fixture to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="visprobe")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="derive a sensitivity threshold from a dataset")
    c.add_argument("--dataset", required=True)
    c.add_argument("--kind", choices=["object", "background"], required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--config", default=None)
    c.add_argument("--backends", default=None)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("probe", help="sensitivity report for one observation")
    c.add_argument("--image", required=True)
    c.add_argument("--instruction", required=True)
    c.add_argument("--config", default=None)
    c.add_argument("--backends", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_probe)

    c = sub.add_parser("run", help="run testbed episodes for one method")
    c.add_argument("--method", choices=[m.value for m in Method], required=True)
    c.add_argument("--episodes", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--env", default="standard")
    c.add_argument("--out", required=True)
    c.add_argument("--config", default=None)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--no-frames", action="store_true")
    c.set_defaults(func=cmd_run)

    c = sub.add_parser("report", help="summarize run directories")
    c.add_argument("--runs", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_report)

    c = sub.add_parser("fixtures", help="emit bundled fixture datasets")
    c.add_argument("what", choices=["calibration", "standard-scene"])
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_fixtures)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(
            json.dumps({"error": type(e).__name__, "message": str(e)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
