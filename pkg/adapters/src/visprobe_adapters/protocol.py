"""Wire-protocol helpers for adapters.

Implements the engine's backend protocol (see the engine repository's
protocol/PROTOCOL.md) from the published document alone: envelope and
per-type schemas, base64 PNG images, and the run-length mask object
{"w", "h", "runs"}. Adapters depend only on this contract, never on the
engine package.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from jsonschema import Draft202012Validator
from PIL import Image as PILImage

PROTOCOL_VERSION = "1"

RLE_SCHEMA = {
    "type": "object",
    "required": ["w", "h", "runs"],
    "properties": {
        "w": {"type": "integer", "minimum": 1},
        "h": {"type": "integer", "minimum": 1},
        "runs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}

_BODIES = {
    "predict_req": {
        "required": ["image", "instruction", "k"],
        "properties": {
            "image": {"type": "string"},
            "instruction": {"type": "string"},
            "k": {"type": "integer", "minimum": 1},
        },
    },
    "predict_resp": {
        "required": ["chunks"],
        "properties": {"chunks": {"type": "array"}},
    },
    "propose_req": {
        "required": ["image", "instruction", "template_id"],
        "properties": {
            "image": {"type": "string"},
            "instruction": {"type": "string"},
            "template_id": {"type": "string"},
        },
    },
    "propose_resp": {
        "required": ["not_relevant_objects", "not_relevant_backgrounds", "raw"],
        "properties": {
            "not_relevant_objects": {"type": "array", "items": {"type": "string"}},
            "not_relevant_backgrounds": {"type": "array", "items": {"type": "string"}},
            "raw": {"type": "string"},
        },
    },
    "segment_req": {
        "required": ["image", "labels", "box_threshold", "text_threshold"],
        "properties": {
            "image": {"type": "string"},
            "labels": {"type": "array", "items": {"type": "string"}},
            "box_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "text_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        },
    },
    "segment_resp": {
        "required": ["masks"],
        "properties": {
            "masks": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["label", "score", "rle"],
                    "properties": {
                        "label": {"type": "string"},
                        "score": {"type": "number", "minimum": 0, "maximum": 1},
                        "rle": RLE_SCHEMA,
                    },
                },
            }
        },
    },
    "inpaint_req": {
        "required": ["image", "rle", "dilation"],
        "properties": {
            "image": {"type": "string"},
            "rle": RLE_SCHEMA,
            "dilation": {"type": "integer", "minimum": 0},
        },
    },
    "inpaint_resp": {
        "required": ["image"],
        "properties": {"image": {"type": "string"}},
    },
    "attn_req": {
        "required": ["image", "instruction", "layer"],
        "properties": {
            "image": {"type": "string"},
            "instruction": {"type": "string"},
            "layer": {"type": "integer"},
        },
    },
    "attn_resp": {
        "required": ["H", "J", "layer", "A", "dA"],
        "properties": {
            "H": {"type": "integer", "minimum": 1},
            "J": {"type": "integer", "minimum": 1},
            "layer": {"type": "integer"},
            "A": {"type": "array", "items": {"type": "number"}},
            "dA": {"type": "array", "items": {"type": "number"}},
        },
    },
    "error_resp": {
        "required": ["code", "message"],
        "properties": {"code": {"type": "string"}, "message": {"type": "string"}},
    },
}


def _schema(msg_type: str, body: dict) -> dict:
    return {
        "type": "object",
        "required": ["v", "id", "type"] + list(body["required"]),
        "properties": {
            "v": {"const": PROTOCOL_VERSION},
            "id": {"type": "integer", "minimum": 0},
            "type": {"const": msg_type},
            **body["properties"],
        },
    }


VALIDATORS = {t: Draft202012Validator(_schema(t, b)) for t, b in _BODIES.items()}


class WireError(Exception):
    """Raised for messages that violate the protocol document."""


def validate(msg) -> dict:
    if not isinstance(msg, dict):
        raise WireError("message must be a JSON object")
    validator = VALIDATORS.get(msg.get("type"))
    if validator is None:
        raise WireError(f"unknown message type {msg.get('type')!r}")
    err = next(validator.iter_errors(msg), None)
    if err is not None:
        raise WireError(f"{msg['type']}: {err.message}")
    return msg


def response(request: dict, **fields) -> dict:
    return {
        "v": PROTOCOL_VERSION,
        "id": request["id"],
        "type": request["type"].replace("_req", "_resp"),
        **fields,
    }


def error(request, code: str, message: str) -> dict:
    req_id = request.get("id", 0) if isinstance(request, dict) else 0
    return {
        "v": PROTOCOL_VERSION,
        "id": req_id if isinstance(req_id, int) else 0,
        "type": "error_resp",
        "code": code,
        "message": message,
    }


def png_to_array(data_b64: str) -> np.ndarray:
    raw = base64.b64decode(data_b64)
    with PILImage.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def array_to_png(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    PILImage.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(
        buf, format="PNG", compress_level=1
    )
    return base64.b64encode(buf.getvalue()).decode("ascii")


def rle_decode(rle: dict) -> np.ndarray:
    w, h, runs = rle["w"], rle["h"], rle["runs"]
    if any(r < 0 for r in runs) or sum(runs) != w * h:
        raise WireError(f"runs must be nonnegative and sum to {w * h}")
    flat = np.zeros(w * h, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if value:
            flat[pos : pos + r] = True
        pos += r
        value = not value
    return flat.reshape(h, w)


def rle_encode(mask: np.ndarray) -> dict:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = [int(x) for x in np.diff(bounds)]
    if flat[0]:
        runs = [0] + runs
    return {"w": int(w), "h": int(h), "runs": runs}


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation via shifted-OR, as the inpaint contract requires."""
    out = np.asarray(mask, dtype=bool).copy()
    h, w = out.shape
    for axis, size in ((0, h), (1, w)):
        acc = out.copy()
        for d in range(1, radius + 1):
            lo = [slice(None), slice(None)]
            hi = [slice(None), slice(None)]
            lo[axis] = slice(0, size - d)
            hi[axis] = slice(d, size)
            acc[tuple(lo)] |= out[tuple(hi)]
            acc[tuple(hi)] |= out[tuple(lo)]
        out = acc
    return out
