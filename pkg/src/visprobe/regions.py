"""Task-irrelevant region proposals and pixel-level grounding.

A vision-language backend proposes two short label lists (irrelevant
objects, irrelevant backgrounds) for the initial observation; a
text-grounded segmentation backend turns labels into pixel masks. Labels
the segmenter cannot find are reported as ungrounded, never fatal.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .core import Image, RegionKind, RegionMask
from .errors import ProposalParseError

log = logging.getLogger(__name__)

MAX_LABEL_WORDS = 4


def _clean_labels(labels: Sequence[str], strict: bool) -> tuple[str, ...]:
    out = []
    for lab in labels:
        lab = " ".join(str(lab).split())
        if not lab or len(lab.split()) > MAX_LABEL_WORDS:
            if strict:
                raise ProposalParseError(f"invalid label {lab!r}", raw=str(labels))
            continue
        out.append(lab)
    return tuple(out)


@dataclass(frozen=True)
class RegionProposal:
    """The two proposal lists; either may be empty."""

    objects: tuple = ()
    backgrounds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "backgrounds", tuple(self.backgrounds))
        for lab in self.objects + self.backgrounds:
            if not lab or len(lab.split()) > MAX_LABEL_WORDS:
                raise ValueError(f"label {lab!r} must be 1..{MAX_LABEL_WORDS} words")

    @property
    def all_labels(self) -> tuple:
        return self.objects + self.backgrounds

    def kind_of(self, label: str) -> RegionKind:
        base = label.split("#", 1)[0]
        return RegionKind.OBJECT if base in self.objects else RegionKind.BACKGROUND

    def is_empty(self) -> bool:
        return not self.objects and not self.backgrounds


_BRACKET_RE = re.compile(r"\[[^\[\]]*\]")


def parse_proposal_text(raw: str, strict: bool = False) -> RegionProposal:
    """Parse backend text into a proposal.

    Accepts strict JSON (an object with the two list fields, or a pair of
    lists) as well as prose containing two bracketed lists in order:
    objects first, backgrounds second.
    """
    text = raw.strip()
    # whole-message JSON object first
    try:
        doc = json.loads(text)
        if isinstance(doc, dict):
            return RegionProposal(
                objects=_clean_labels(doc.get("not_relevant_objects", []), strict),
                backgrounds=_clean_labels(doc.get("not_relevant_backgrounds", []), strict),
            )
        if isinstance(doc, list) and len(doc) == 2:
            return RegionProposal(
                objects=_clean_labels(doc[0], strict),
                backgrounds=_clean_labels(doc[1], strict),
            )
    except (json.JSONDecodeError, ValueError):
        pass
    # bracketed-list prose: first list = objects, second = backgrounds
    groups = []
    for m in _BRACKET_RE.finditer(text):
        try:
            lst = json.loads(m.group(0).replace("'", '"'))
        except json.JSONDecodeError:
            continue
        if isinstance(lst, list) and all(isinstance(x, str) for x in lst):
            groups.append(lst)
    if not groups:
        raise ProposalParseError("no parseable region lists in backend output", raw=raw)
    objects = groups[0]
    backgrounds = groups[1] if len(groups) > 1 else []
    return RegionProposal(
        objects=_clean_labels(objects, strict),
        backgrounds=_clean_labels(backgrounds, strict),
    )


@dataclass(frozen=True)
class Exemplar:
    image_ref: str
    task: str
    objects: tuple
    backgrounds: tuple


@dataclass(frozen=True)
class PromptTemplate:
    """Few-shot prompt layout stored as a versioned JSON text file.

    ``query_format`` may contain the placeholder tokens ``{TASK}`` and
    ``{IMAGE_k}``; exemplar image slots render as ``{IMAGE_1}``..``{IMAGE_n}``
    and the query observation as the final slot.
    """

    version: str = "prompt/1"
    preamble: str = (
        "You are an assistant helping a robot determine what objects in the "
        "image are relevant for completing its task. You will be shown some "
        "text and images."
    )
    exemplars: tuple = ()
    query_format: str = (
        "The robotic arm in the image is given the following task: '{TASK}'\n"
        "{IMAGE_Q}\n"
        "Provide a list of objects in the image that are not relevant for "
        "completing the task, called 'not_relevant_objects'. Then provide a "
        "list of backgrounds in the image that are not relevant for "
        "completing the task, called 'not_relevant_backgrounds'. Give your "
        "answer in the form of two different lists with one or two words per "
        "object."
    )

    def __post_init__(self):
        object.__setattr__(self, "exemplars", tuple(self.exemplars))

    def require_few_shot(self) -> None:
        if not self.exemplars:
            raise ValueError("few-shot mode needs at least one exemplar")

    def render_text(self, instruction: str) -> str:
        """Flat text rendering with {IMAGE_k} markers left for the adapter."""
        parts = [self.preamble, ""]
        for i, ex in enumerate(self.exemplars, start=1):
            parts.append(f"Example {i}. Task: '{ex.task}'")
            parts.append(json.dumps(list(ex.objects)))
            parts.append(json.dumps(list(ex.backgrounds)))
            parts.append("{IMAGE_%d}" % i)
            parts.append("")
        parts.append(
            self.query_format.replace("{TASK}", instruction).replace(
                "{IMAGE_Q}", "{IMAGE_%d}" % (len(self.exemplars) + 1)
            )
        )
        return "\n".join(parts)

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "preamble": self.preamble,
            "exemplars": [
                {
                    "image_ref": ex.image_ref,
                    "task": ex.task,
                    "objects": list(ex.objects),
                    "backgrounds": list(ex.backgrounds),
                }
                for ex in self.exemplars
            ],
            "query_format": self.query_format,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "PromptTemplate":
        return PromptTemplate(
            version=d.get("version", "prompt/1"),
            preamble=d["preamble"],
            exemplars=tuple(
                Exemplar(
                    image_ref=e["image_ref"],
                    task=e["task"],
                    objects=tuple(e["objects"]),
                    backgrounds=tuple(e["backgrounds"]),
                )
                for e in d.get("exemplars", [])
            ),
            query_format=d["query_format"],
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2)

    @staticmethod
    def load(path) -> "PromptTemplate":
        with open(path) as f:
            return PromptTemplate.from_json_dict(json.load(f))


class VLMBackend(Protocol):
    def propose(self, image: Image, instruction: str, template_id: str) -> tuple:
        """Returns (objects, backgrounds, raw_text)."""
        ...


class SegBackend(Protocol):
    def segment(
        self, image: Image, labels: Sequence[str], box_threshold: float, text_threshold: float
    ) -> list:
        """Returns [(label, score, bool_mask_array), ...]."""
        ...


def propose_regions(
    vlm: VLMBackend,
    obs: Image,
    instruction: str,
    template: PromptTemplate | None = None,
    strict: bool = False,
) -> RegionProposal:
    """Ask the VLM backend for the two irrelevant-region lists.

    Structured lists from the backend are used directly when valid;
    otherwise the raw text is parsed. Raises ProposalParseError with the
    raw text attached when neither yields lists.
    """
    template_id = template.version if template else "prompt/1"
    objects, backgrounds, raw = vlm.propose(obs, instruction, template_id)
    if objects is not None and backgrounds is not None:
        try:
            return RegionProposal(
                objects=_clean_labels(objects, strict),
                backgrounds=_clean_labels(backgrounds, strict),
            )
        except (ValueError, ProposalParseError):
            pass
    return parse_proposal_text(raw, strict=strict)


@dataclass(frozen=True)
class GroundingResult:
    masks: tuple
    ungrounded: tuple

    def by_label(self) -> dict:
        return {m.label: m for m in self.masks}


def ground_regions(
    seg: SegBackend,
    obs: Image,
    proposal: RegionProposal,
    box_threshold: float = 0.4,
    text_threshold: float = 0.4,
    exclusion: np.ndarray | None = None,
) -> GroundingResult:
    """Ground proposal labels to pixel masks.

    Multiple instances of one label get ``#2``, ``#3``... suffixes. Masks
    scoring below ``box_threshold`` are dropped. Labels with no surviving
    mask are returned as ungrounded. When an exclusion mask (e.g. the task
    object) is supplied, overlapping pixels are clipped away.
    """
    if not (0 < box_threshold < 1) or not (0 < text_threshold < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    if proposal.is_empty():
        return GroundingResult(masks=(), ungrounded=())
    raw = seg.segment(obs, list(proposal.all_labels), box_threshold, text_threshold)
    grouped: dict[str, list] = {lab: [] for lab in proposal.all_labels}
    for label, score, mask_arr in raw:
        if label in grouped and score >= box_threshold:
            grouped[label].append((score, mask_arr))
    masks: list[RegionMask] = []
    ungrounded: list[str] = []
    for label in proposal.all_labels:
        instances = grouped[label]
        kept = 0
        for score, mask_arr in instances:
            arr = np.asarray(mask_arr, dtype=bool)
            if exclusion is not None and (arr & exclusion).any():
                clipped = int((arr & exclusion).sum())
                log.warning(
                    "mask %r overlaps the exclusion mask; clipping %d px", label, clipped
                )
                arr = arr & ~exclusion
            if not arr.any():
                continue
            kept += 1
            name = label if kept == 1 else f"{label}#{kept}"
            masks.append(
                RegionMask(label=name, kind=proposal.kind_of(label), mask=arr, score=float(score))
            )
        if kept == 0:
            ungrounded.append(label)
    return GroundingResult(masks=tuple(masks), ungrounded=tuple(ungrounded))
