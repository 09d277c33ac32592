"""Regenerate committed golden files after intentional fixture changes.

Writes tests/golden/probe_report.json, protocol/conformance_requests.jsonl,
and protocol/golden_stub_transcript.jsonl. Run from the repository root.
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from visprobe.backends.clients import local_testbed_suite  # noqa: E402
from visprobe.backends.protocol import image_to_b64, make_request  # noqa: E402
from visprobe.cli import main as cli_main  # noqa: E402
from visprobe.core import Image, canonical_json, rle_encode  # noqa: E402
from visprobe.regions import ground_regions, propose_regions  # noqa: E402
from visprobe.scenes import make_standard_scene  # noqa: E402
from visprobe.sensitivity import probe_all  # noqa: E402
from visprobe.core import PipelineConfig  # noqa: E402
from visprobe.testbed import render  # noqa: E402


def tiny_image() -> Image:
    rng = np.random.default_rng(5)
    return Image(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))


def write_probe_golden() -> None:
    scene = make_standard_scene()
    img, _ = render(scene)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        img.save(tmp / "obs.png")
        (tmp / "backends.json").write_text(
            json.dumps({"transport": "stub-scene", "scene": "standard", "seed": 0})
        )
        rc = cli_main(
            ["probe", "--image", str(tmp / "obs.png"), "--instruction", scene.instruction,
             "--backends", str(tmp / "backends.json"),
             "--out", str(ROOT / "tests" / "golden" / "probe_report.json"), "--seed", "1"]
        )
        assert rc == 0


def write_conformance_requests() -> None:
    img = image_to_b64(tiny_image())
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:9, 4:9] = True
    rle = rle_encode(mask).to_json_dict()
    lines = []

    def add(roles, expect, request):
        lines.append({"roles": roles, "expect": expect, "request": request})

    add(["vla"], {"type": "predict_resp"},
        make_request("predict_req", 1, image=img, instruction="pick up the block", k=2))
    add(["vlm"], {"type": "propose_resp"},
        make_request("propose_req", 2, image=img, instruction="pick up the block",
                     template_id="prompt/1"))
    add(["seg"], {"type": "segment_resp"},
        make_request("segment_req", 3, image=img, labels=["cup", "towel"],
                     box_threshold=0.4, text_threshold=0.4))
    add(["inpaint"], {"type": "inpaint_resp"},
        make_request("inpaint_req", 4, image=img, rle=rle, dilation=2))
    # wrong kind for every adapter: each role must answer 'unavailable'
    add(["vlm", "seg", "inpaint"], {"type": "error_resp", "code": "unavailable"},
        make_request("predict_req", 5, image=img, instruction="x", k=1))
    add(["vla"], {"type": "error_resp", "code": "unavailable"},
        make_request("propose_req", 6, image=img, instruction="x", template_id="prompt/1"))
    # malformed: missing fields, bad version, unknown type
    add(["vla", "vlm", "seg", "inpaint"], {"type": "error_resp", "code": "protocol"},
        {"v": "1", "id": 7, "type": "predict_req", "image": img})
    add(["vla", "vlm", "seg", "inpaint"], {"type": "error_resp", "code": "protocol"},
        {"v": "9", "id": 8, "type": "segment_req", "image": img, "labels": [],
         "box_threshold": 0.4, "text_threshold": 0.4})
    add(["vla", "vlm", "seg", "inpaint"], {"type": "error_resp", "code": "protocol"},
        {"v": "1", "id": 9, "type": "mystery_req"})
    out = ROOT / "protocol" / "conformance_requests.jsonl"
    out.write_text("".join(canonical_json(line) + "\n" for line in lines))


def write_golden_transcript() -> None:
    scene = make_standard_scene()
    img, _ = render(scene)
    suite = local_testbed_suite(scene, seed=0)
    cfg = PipelineConfig()
    proposal = propose_regions(suite.vlm, img, scene.instruction)
    grounding = ground_regions(suite.seg, img, proposal, cfg.box_threshold, cfg.text_threshold)
    probe_all(suite.policy, img, scene.instruction, grounding.masks, cfg, seed=1)
    suite.transcript.save(ROOT / "protocol" / "golden_stub_transcript.jsonl")


if __name__ == "__main__":
    write_probe_golden()
    write_conformance_requests()
    write_golden_transcript()
    print("golden files regenerated")
