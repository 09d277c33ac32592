"""The four reference adapters.

Each adapter handles exactly one request kind and owns its upstream
integration; everything else (validation, error taxonomy, serving) lives
in the shared dispatch. Adapters hold no engine logic: no thresholds, no
sensitivity decisions, no mask selection beyond what the protocol field
semantics require.
"""

from __future__ import annotations

import numpy as np

from . import protocol, prompt
from .config import AdapterConfig
from .upstream import UpstreamError, post_json


class VLMAdapter:
    """propose_req -> hosted chat-completions vision model."""

    kind = "propose_req"

    def __init__(self, config: AdapterConfig, post=post_json, exemplar_loader=None):
        self.config = config
        self.post = post
        self.exemplar_loader = exemplar_loader
        self.template = (
            prompt.Template.load(config.template_path)
            if config.template_path
            else prompt.Template.default()
        )
        self.api_key = config.api_key()

    def handle(self, req: dict) -> dict:
        import base64

        png = base64.b64decode(req["image"])
        parts = prompt.render_messages(
            self.template, req["instruction"], png, self.exemplar_loader
        )
        payload = {
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": parts}],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        reply = self.post(
            self.config.upstream_url, payload, headers=headers,
            timeout_s=self.config.timeout_s,
        )
        try:
            text = reply["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise UpstreamError(f"unexpected completion shape: {e}") from e
        try:
            objects, backgrounds = prompt.parse_reply(text)
        except ValueError:
            objects, backgrounds = [], []
        return protocol.response(
            req,
            not_relevant_objects=objects,
            not_relevant_backgrounds=backgrounds,
            raw=str(text),
        )


class SegAdapter:
    """segment_req -> text-grounded segmentation service.

    Upstream contract: POST {image, labels, box_threshold, text_threshold}
    -> {detections: [{label, score, mask: <b64 PNG, white=true>}]}.
    """

    kind = "segment_req"

    def __init__(self, config: AdapterConfig, post=post_json):
        self.config = config
        self.post = post

    def handle(self, req: dict) -> dict:
        reply = self.post(
            self.config.upstream_url,
            {
                "image": req["image"],
                "labels": req["labels"],
                "box_threshold": req["box_threshold"],
                "text_threshold": req["text_threshold"],
            },
            timeout_s=self.config.timeout_s,
        )
        masks = []
        for det in reply.get("detections", []):
            arr = protocol.png_to_array(det["mask"])
            mask = arr[..., 0] > 127
            if not mask.any():
                continue
            masks.append(
                {
                    "label": str(det["label"]),
                    "score": float(det["score"]),
                    "rle": protocol.rle_encode(mask),
                }
            )
        return protocol.response(req, masks=masks)


class InpaintAdapter:
    """inpaint_req -> diffusion inpainting service.

    Upstream contract (stable-diffusion-webui style): POST
    {init_images: [b64], mask: b64, inpainting_fill, ...} -> {images: [b64]}.
    The request's dilation radius is applied to the mask before upload,
    per the protocol's field semantics.
    """

    kind = "inpaint_req"

    def __init__(self, config: AdapterConfig, post=post_json):
        self.config = config
        self.post = post

    def handle(self, req: dict) -> dict:
        image = protocol.png_to_array(req["image"])
        mask = protocol.rle_decode(req["rle"])
        if mask.shape != image.shape[:2]:
            raise protocol.WireError("mask dimensions do not match the image")
        if req["dilation"]:
            mask = protocol.dilate(mask, req["dilation"])
        mask_png = protocol.array_to_png(
            np.repeat((mask * 255).astype(np.uint8)[..., None], 3, axis=2)
        )
        reply = self.post(
            self.config.upstream_url,
            {
                "init_images": [req["image"]],
                "mask": mask_png,
                "inpainting_fill": self.config.extra.get("inpainting_fill", 1),
                "denoising_strength": self.config.extra.get("denoising_strength", 0.75),
                "prompt": self.config.extra.get("prompt", "background"),
            },
            timeout_s=self.config.timeout_s,
        )
        try:
            out_b64 = reply["images"][0]
        except (KeyError, IndexError, TypeError) as e:
            raise UpstreamError(f"unexpected inpainting reply shape: {e}") from e
        out = protocol.png_to_array(out_b64)
        if out.shape != image.shape:
            raise UpstreamError(
                f"inpainting service returned {out.shape[:2]}, expected {image.shape[:2]}"
            )
        return protocol.response(req, image=protocol.array_to_png(out))


class VLAAdapter:
    """predict_req -> action-policy server.

    Upstream contract: POST {image, instruction, samples} ->
    {actions: samples x L x 7}. Servers that only return one sample per
    call are polled k times.
    """

    kind = "predict_req"

    def __init__(self, config: AdapterConfig, post=post_json):
        self.config = config
        self.post = post
        self.single_sample = bool(config.extra.get("single_sample", False))

    def _fetch(self, req: dict, samples: int) -> list:
        reply = self.post(
            self.config.upstream_url,
            {"image": req["image"], "instruction": req["instruction"], "samples": samples},
            timeout_s=self.config.timeout_s,
        )
        actions = reply.get("actions")
        if not isinstance(actions, list):
            raise UpstreamError("policy server reply has no 'actions' list")
        return actions

    def handle(self, req: dict) -> dict:
        if self.single_sample:
            chunks = []
            for _ in range(req["k"]):
                chunks.extend(self._fetch(req, 1))
        else:
            chunks = self._fetch(req, req["k"])
        if len(chunks) != req["k"]:
            raise UpstreamError(f"policy server returned {len(chunks)} chunks, wanted {req['k']}")
        return protocol.response(req, chunks=chunks)


ADAPTERS = {
    "vlm": VLMAdapter,
    "seg": SegAdapter,
    "inpaint": InpaintAdapter,
    "vla": VLAAdapter,
}


def make_dispatch(adapter):
    """Wrap one adapter in protocol validation and the shared error taxonomy."""

    def dispatch(request: dict) -> dict:
        try:
            protocol.validate(request)
        except protocol.WireError as e:
            return protocol.error(request, "protocol", str(e))
        if request["type"] != adapter.kind:
            return protocol.error(
                request, "unavailable", f"this adapter serves {adapter.kind} only"
            )
        try:
            resp = adapter.handle(request)
            protocol.validate(resp)
            return resp
        except protocol.WireError as e:
            return protocol.error(request, "protocol", str(e))
        except UpstreamError as e:
            return protocol.error(request, "upstream", str(e))

    return dispatch
