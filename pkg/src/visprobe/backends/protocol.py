"""Message schemas and domain/wire conversions.

One JSON object per message. Requests carry ``{"v": "1", "id": <int>,
"type": "<kind>_req", ...}``; responses echo the id with the matching
``_resp`` type (or ``error_resp``). Images travel as base64 PNG, masks as
the run-length object ``{"w", "h", "runs"}``. Every message is validated
against its schema before any field crosses into domain types.
"""

from __future__ import annotations

import base64

import numpy as np
from jsonschema import Draft202012Validator

from ..core import ActionChunk, Image, RLESpec
from ..errors import ProtocolError

PROTOCOL_VERSION = "1"

_RLE_SCHEMA = {
    "type": "object",
    "required": ["w", "h", "runs"],
    "properties": {
        "w": {"type": "integer", "minimum": 1},
        "h": {"type": "integer", "minimum": 1},
        "runs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}

_BODY_SCHEMAS = {
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
        "properties": {
            "chunks": {
                "type": "array",
                "items": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}},
                },
            }
        },
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
                        "rle": _RLE_SCHEMA,
                    },
                },
            }
        },
    },
    "inpaint_req": {
        "required": ["image", "rle", "dilation"],
        "properties": {
            "image": {"type": "string"},
            "rle": _RLE_SCHEMA,
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


def _full_schema(msg_type: str, body: dict) -> dict:
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


_VALIDATORS = {
    t: Draft202012Validator(_full_schema(t, body)) for t, body in _BODY_SCHEMAS.items()
}

REQUEST_TYPES = tuple(t for t in _BODY_SCHEMAS if t.endswith("_req"))
RESPONSE_TYPES = tuple(t for t in _BODY_SCHEMAS if t.endswith("_resp"))


def make_request(msg_type: str, req_id: int, **fields) -> dict:
    return {"v": PROTOCOL_VERSION, "id": req_id, "type": msg_type, **fields}


def make_response(request: dict, **fields) -> dict:
    msg_type = request["type"].replace("_req", "_resp")
    return {"v": PROTOCOL_VERSION, "id": request["id"], "type": msg_type, **fields}


def make_error(request, code: str, message: str) -> dict:
    req_id = request.get("id", 0) if isinstance(request, dict) else 0
    return {
        "v": PROTOCOL_VERSION,
        "id": int(req_id) if isinstance(req_id, int) else 0,
        "type": "error_resp",
        "code": code,
        "message": message,
    }


def validate_message(msg) -> dict:
    """Schema-check one decoded message; returns it or raises ProtocolError."""
    if not isinstance(msg, dict):
        raise ProtocolError(f"message must be an object, got {type(msg).__name__}", payload=msg)
    msg_type = msg.get("type")
    validator = _VALIDATORS.get(msg_type)
    if validator is None:
        raise ProtocolError(f"unknown message type {msg_type!r}", payload=msg)
    err = next(validator.iter_errors(msg), None)
    if err is not None:
        raise ProtocolError(f"{msg_type} schema violation: {err.message}", payload=msg)
    return msg


def image_to_b64(image: Image) -> str:
    return base64.b64encode(image.to_png()).decode("ascii")


def image_from_b64(data: str) -> Image:
    try:
        return Image.from_png(base64.b64decode(data))
    except Exception as e:
        raise ProtocolError(f"undecodable image payload: {e}") from e


def chunks_to_wire(chunks) -> list:
    return [c.to_lists() for c in chunks]


def chunks_from_wire(rows: list, k: int, expected_len: int | None = None) -> list:
    """Decode and shape-check k chunks of L x 7 actions."""
    if len(rows) != k:
        raise ProtocolError(f"expected {k} chunks, got {len(rows)}", payload=rows)
    chunks = []
    length = expected_len
    for r in rows:
        try:
            chunk = ActionChunk(np.asarray(r, dtype=np.float64))
        except ValueError as e:
            raise ProtocolError(f"malformed chunk: {e}", payload=r) from e
        if length is None:
            length = len(chunk)
        elif len(chunk) != length:
            raise ProtocolError(
                f"chunk length {len(chunk)} disagrees with {length}", payload=r
            )
        chunks.append(chunk)
    return chunks


def rle_to_wire(spec: RLESpec) -> dict:
    return spec.to_json_dict()


def rle_from_wire(d: dict) -> RLESpec:
    return RLESpec.from_json_dict(d)
