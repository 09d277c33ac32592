"""Few-shot prompt rendering for the region-proposal adapter.

Consumes the engine's versioned template file format (JSON with a
preamble, exemplars carrying image refs plus the two label lists, and a
query format with {TASK} / {IMAGE_Q} placeholder tokens) and renders the
interleaved text/image message a chat-completions vision API expects.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass
from pathlib import Path

DEFAULT_PREAMBLE = (
    "You are an assistant helping a robot determine what objects in the "
    "image are relevant for completing its task. You will be shown some "
    "text and images."
)

DEFAULT_QUERY = (
    "The robotic arm in the image is given the following task: '{TASK}'\n"
    "{IMAGE_Q}\n"
    "Provide a list of objects in the image that are not relevant for "
    "completing the task, called 'not_relevant_objects'. Then provide a "
    "list of backgrounds in the image that are not relevant for "
    "completing the task, called 'not_relevant_backgrounds'. Give your "
    "answer in the form of two different lists with one or two words per "
    "object."
)


@dataclass
class Template:
    version: str
    preamble: str
    exemplars: list
    query_format: str

    @staticmethod
    def load(path) -> "Template":
        d = json.loads(Path(path).read_text())
        return Template(
            version=d.get("version", "prompt/1"),
            preamble=d["preamble"],
            exemplars=list(d.get("exemplars", [])),
            query_format=d["query_format"],
        )

    @staticmethod
    def default() -> "Template":
        return Template(
            version="prompt/1", preamble=DEFAULT_PREAMBLE, exemplars=[],
            query_format=DEFAULT_QUERY,
        )


def _image_part(png_bytes: bytes) -> dict:
    b64 = base64.b64encode(png_bytes).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}


def render_messages(
    template: Template, instruction: str, query_png: bytes, exemplar_loader=None
) -> list:
    """Build the chat content parts: preamble, one block per exemplar (task
    line, the two lists, the exemplar image), then the query.

    ``exemplar_loader`` maps an exemplar's image_ref to PNG bytes; when
    omitted, exemplar image slots render as text placeholders (useful for
    dry runs and tests without fixture images).
    """
    parts = [{"type": "text", "text": template.preamble}]
    for i, ex in enumerate(template.exemplars, start=1):
        block = (
            f"\nExample {i}. Task: '{ex['task']}'\n\n"
            f"{json.dumps(list(ex['objects']))}\n"
            f"{json.dumps(list(ex['backgrounds']))}\n"
        )
        parts.append({"type": "text", "text": block})
        if exemplar_loader is not None:
            parts.append(_image_part(exemplar_loader(ex["image_ref"])))
        else:
            parts.append({"type": "text", "text": "{IMAGE_%d}" % i})
    query = template.query_format.replace("{TASK}", instruction)
    before, _, after = query.partition("{IMAGE_Q}")
    parts.append({"type": "text", "text": before.rstrip("\n")})
    parts.append(_image_part(query_png))
    if after.strip():
        parts.append({"type": "text", "text": after.lstrip("\n")})
    return parts


def flat_text(parts: list) -> str:
    """The text view of rendered parts (image slots appear as markers)."""
    out = []
    img_idx = 0
    for p in parts:
        if p["type"] == "text":
            out.append(p["text"])
        else:
            img_idx += 1
            out.append("{IMAGE_%d}" % img_idx)
    return "\n".join(out)


_LIST_RE = re.compile(r"\[[^\[\]]*\]")


def parse_reply(text: str) -> tuple:
    """Extract (objects, backgrounds) from a model reply.

    Accepts a JSON object with the two list fields or prose containing two
    bracketed lists in order. Raises ValueError when neither parses.
    """
    try:
        doc = json.loads(text)
        if isinstance(doc, dict):
            return (
                [str(x) for x in doc.get("not_relevant_objects", [])],
                [str(x) for x in doc.get("not_relevant_backgrounds", [])],
            )
    except json.JSONDecodeError:
        pass
    groups = []
    for m in _LIST_RE.finditer(text):
        try:
            lst = json.loads(m.group(0).replace("'", '"'))
        except json.JSONDecodeError:
            continue
        if isinstance(lst, list) and all(isinstance(x, str) for x in lst):
            groups.append(lst)
    if not groups:
        raise ValueError("no region lists found in model reply")
    return groups[0], groups[1] if len(groups) > 1 else []
