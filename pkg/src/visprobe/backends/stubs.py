"""Deterministic fixture-driven stub implementations of every backend.

Stubs operate on wire messages so they are protocol-indistinguishable
from real adapters: the same dispatch function serves an in-process
LocalTransport, the stdio server, and golden-transcript recording.
"""

from __future__ import annotations

import json

import numpy as np

from ..core import rle_decode, rle_encode
from ..errors import EngineError, FixtureMissing, ProtocolError
from ..intervene import onion_peel_fill
from .. import _kernels
from ..testbed import SceneSpec, SimPolicy, ToyAttentionPolicy, region_masks
from .protocol import (
    chunks_to_wire,
    image_from_b64,
    image_to_b64,
    make_error,
    make_response,
    rle_from_wire,
    validate_message,
)


class StubPolicy:
    """Serves predict requests from a simulated testbed policy."""

    def __init__(self, policy: SimPolicy):
        self.policy = policy

    def handle(self, req: dict) -> dict:
        image = image_from_b64(req["image"])
        chunks = self.policy.predict(image, req["instruction"], req["k"])
        return make_response(req, chunks=chunks_to_wire(chunks))


class StubVLM:
    """Returns a fixed proposal, with the raw text rendered as two lists."""

    def __init__(self, objects=None, backgrounds=None):
        self.objects = list(objects) if objects is not None else None
        self.backgrounds = list(backgrounds) if backgrounds is not None else None

    def handle(self, req: dict) -> dict:
        if self.objects is None or self.backgrounds is None:
            raise FixtureMissing("stub VLM has no proposal fixture configured")
        raw = json.dumps(self.objects) + "\n" + json.dumps(self.backgrounds)
        return make_response(
            req,
            not_relevant_objects=self.objects,
            not_relevant_backgrounds=self.backgrounds,
            raw=raw,
        )


class StubSeg:
    """Grounds labels from a fixture mapping label -> [(mask, score), ...]."""

    def __init__(self, fixtures: dict):
        self.fixtures = {
            label: [(np.asarray(m, dtype=bool), float(s)) for m, s in instances]
            for label, instances in fixtures.items()
        }

    @staticmethod
    def from_scene(scene: SceneSpec, score: float = 0.9) -> "StubSeg":
        return StubSeg(
            {label: [(mask.mask, score)] for label, mask in region_masks(scene).items()}
        )

    def handle(self, req: dict) -> dict:
        out = []
        for label in req["labels"]:
            for mask, score in self.fixtures.get(label, []):
                out.append(
                    {"label": label, "score": score, "rle": rle_encode(mask).to_json_dict()}
                )
        return make_response(req, masks=out)


class StubInpaint:
    """The built-in onion-peel fill, behind the wire protocol."""

    def handle(self, req: dict) -> dict:
        image = image_from_b64(req["image"])
        mask = rle_decode(rle_from_wire(req["rle"]))
        if mask.shape != (image.height, image.width):
            raise ProtocolError("inpaint mask does not match image dimensions", payload=req["rle"])
        dilated = _kernels.dilate_bool(mask, req["dilation"]) if req["dilation"] else mask
        filled = onion_peel_fill(image, dilated)
        return make_response(req, image=image_to_b64(filled))


class StubAttn:
    """Serves attention tensors from the toy closed-form attention policy."""

    def __init__(self, policy: ToyAttentionPolicy | None = None):
        self.policy = policy or ToyAttentionPolicy()

    def handle(self, req: dict) -> dict:
        image = image_from_b64(req["image"])
        attn = self.policy.attention(image)
        grad = self.policy.gradients(attn)
        return make_response(
            req,
            H=attn.shape[0],
            J=attn.shape[1],
            layer=self.policy.layer,
            A=[float(x) for x in attn.ravel()],
            dA=[float(x) for x in grad.ravel()],
        )


def build_stub_dispatch(
    policy: StubPolicy | None = None,
    vlm: StubVLM | None = None,
    seg: StubSeg | None = None,
    inpaint: StubInpaint | None = None,
    attn: StubAttn | None = None,
):
    """One handler for all message types, with protocol-level error mapping."""
    handlers = {}
    if policy is not None:
        handlers["predict_req"] = policy.handle
    if vlm is not None:
        handlers["propose_req"] = vlm.handle
    if seg is not None:
        handlers["segment_req"] = seg.handle
    if inpaint is not None:
        handlers["inpaint_req"] = inpaint.handle
    if attn is not None:
        handlers["attn_req"] = attn.handle

    def dispatch(request: dict) -> dict:
        try:
            validate_message(request)
            handler = handlers.get(request["type"])
            if handler is None:
                return make_error(request, "unavailable", f"no stub for {request['type']}")
            return handler(request)
        except FixtureMissing as e:
            return make_error(request, "fixture_missing", str(e))
        except ProtocolError as e:
            return make_error(request, "protocol", str(e))
        except EngineError as e:
            return make_error(request, "unavailable", str(e))

    return dispatch


def stub_dispatch_for_scene(
    scene: SceneSpec,
    seed: int = 0,
    vlm_objects=None,
    vlm_backgrounds=None,
    attn_policy: ToyAttentionPolicy | None = None,
):
    """Standard full-stub wiring for a testbed scene.

    The VLM fixture defaults to proposing exactly the scene's distractor
    labels (objects) and tile labels (backgrounds).
    """
    if vlm_objects is None:
        vlm_objects = [d.label for d in scene.distractors]
    if vlm_backgrounds is None:
        vlm_backgrounds = [t.label for t in scene.tiles]
    return build_stub_dispatch(
        policy=StubPolicy(SimPolicy.from_scene(scene, seed=seed)),
        vlm=StubVLM(vlm_objects, vlm_backgrounds),
        seg=StubSeg.from_scene(scene),
        inpaint=StubInpaint(),
        attn=StubAttn(attn_policy or ToyAttentionPolicy()),
    )
