"""Typed clients over the wire protocol, and the stdio server loop.

Clients convert between domain types and wire messages; request ids come
from a shared monotone counter so a run's traffic forms one replayable
sequence.
"""

from __future__ import annotations

import itertools
import json
import sys
import threading
from dataclasses import dataclass

import numpy as np

from ..attribution import AttentionTensors
from ..core import Image, RegionMask, canonical_json, rle_decode
from ..errors import ProtocolError
from ..testbed import SceneSpec
from .protocol import (
    chunks_from_wire,
    image_from_b64,
    image_to_b64,
    make_error,
    make_request,
)
from .transports import BackendEndpoint, LocalTransport, Transcript, call


class RequestIds:
    """Monotone id allocator shared by every client of one run."""

    def __init__(self):
        self._counter = itertools.count(1)
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            return next(self._counter)


class _Client:
    def __init__(self, endpoint: BackendEndpoint, ids: RequestIds | None = None):
        self.endpoint = endpoint
        self.ids = ids or RequestIds()

    def _call(self, msg_type: str, **fields) -> dict:
        return call(self.endpoint, make_request(msg_type, self.ids.next(), **fields))


class PolicyClient(_Client):
    def predict(self, image: Image, instruction: str, k: int) -> list:
        resp = self._call(
            "predict_req", image=image_to_b64(image), instruction=instruction, k=k
        )
        return chunks_from_wire(resp["chunks"], k)


class VLMClient(_Client):
    def propose(self, image: Image, instruction: str, template_id: str) -> tuple:
        resp = self._call(
            "propose_req",
            image=image_to_b64(image),
            instruction=instruction,
            template_id=template_id,
        )
        return (
            list(resp["not_relevant_objects"]),
            list(resp["not_relevant_backgrounds"]),
            resp["raw"],
        )


class SegClient(_Client):
    def segment(self, image: Image, labels, box_threshold: float, text_threshold: float) -> list:
        resp = self._call(
            "segment_req",
            image=image_to_b64(image),
            labels=list(labels),
            box_threshold=box_threshold,
            text_threshold=text_threshold,
        )
        out = []
        for m in resp["masks"]:
            arr = rle_decode_checked(m["rle"], image)
            out.append((m["label"], float(m["score"]), arr))
        return out


class InpaintClient(_Client):
    def inpaint(self, image: Image, mask: RegionMask, dilation: int) -> Image:
        from ..core import rle_encode

        resp = self._call(
            "inpaint_req",
            image=image_to_b64(image),
            rle=rle_encode(mask).to_json_dict(),
            dilation=dilation,
        )
        result = image_from_b64(resp["image"])
        if (result.height, result.width) != (image.height, image.width):
            raise ProtocolError("inpaint backend returned mismatched image dimensions")
        return result


class AttnClient(_Client):
    def attention(self, image: Image, instruction: str, layer: int) -> AttentionTensors:
        resp = self._call(
            "attn_req", image=image_to_b64(image), instruction=instruction, layer=layer
        )
        h, j = resp["H"], resp["J"]
        if len(resp["A"]) != h * j or len(resp["dA"]) != h * j:
            raise ProtocolError("attention payload length does not match H*J", payload=resp)
        a = np.asarray(resp["A"], dtype=np.float64).reshape(h, j)
        da = np.asarray(resp["dA"], dtype=np.float64).reshape(h, j)
        try:
            return AttentionTensors(attn=a, grad=da, layer=resp["layer"])
        except Exception as e:
            raise ProtocolError(f"invalid attention tensors: {e}", payload=resp) from e


def rle_decode_checked(rle: dict, image: Image) -> np.ndarray:
    from ..core import RLESpec
    from ..errors import MalformedRLE

    try:
        spec = RLESpec.from_json_dict(rle)
        arr = rle_decode(spec)
    except MalformedRLE as e:
        raise ProtocolError(f"bad RLE in response: {e}", payload=rle) from e
    if arr.shape != (image.height, image.width):
        raise ProtocolError(
            f"mask {arr.shape} does not match image {(image.height, image.width)}",
            payload=rle,
        )
    return arr


@dataclass
class BackendSuite:
    """All clients an engine run needs, sharing one id space and transcript."""

    policy: PolicyClient
    vlm: VLMClient | None = None
    seg: SegClient | None = None
    inpaint: InpaintClient | None = None
    attn: AttnClient | None = None
    transcript: Transcript | None = None

    def close(self) -> None:
        seen = set()
        for client in (self.policy, self.vlm, self.seg, self.inpaint, self.attn):
            if client is None:
                continue
            transport = client.endpoint.transport
            if id(transport) not in seen:
                seen.add(id(transport))
                transport.close()


def suite_from_transport(transport, timeout_ms: int = 30000, retries: int = 0) -> BackendSuite:
    """All five clients over one shared transport."""
    transcript = Transcript()
    ids = RequestIds()

    def ep():
        return BackendEndpoint(
            transport=transport, timeout_ms=timeout_ms, retries=retries, transcript=transcript
        )

    return BackendSuite(
        policy=PolicyClient(ep(), ids),
        vlm=VLMClient(ep(), ids),
        seg=SegClient(ep(), ids),
        inpaint=InpaintClient(ep(), ids),
        attn=AttnClient(ep(), ids),
        transcript=transcript,
    )


def local_testbed_suite(scene: SceneSpec, seed: int = 0, **stub_kwargs) -> BackendSuite:
    """Stub suite for a scene over an in-process transport."""
    from .stubs import stub_dispatch_for_scene

    dispatch = stub_dispatch_for_scene(scene, seed=seed, **stub_kwargs)
    return suite_from_transport(LocalTransport(dispatch))


def serve_stdio(dispatch, stdin=None, stdout=None) -> None:
    """Serve line-delimited JSON requests until EOF.

    Undecodable lines produce an ``error_resp`` with id 0 rather than
    killing the server.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as e:
            response = make_error({}, "protocol", f"undecodable request: {e}")
        else:
            try:
                response = dispatch(request)
            except Exception as e:  # stub bugs must not kill the server
                response = make_error(request, "unavailable", f"handler crashed: {e}")
        stdout.write(canonical_json(response) + "\n")
        stdout.flush()
