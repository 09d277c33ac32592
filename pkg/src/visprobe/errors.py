"""Exception taxonomy shared across the engine."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class MalformedRLE(EngineError):
    """Run-length data does not describe a mask of the stated size."""


class InvalidKernel(EngineError):
    """Blur kernel must be an odd positive integer."""


class ChunkShapeError(EngineError):
    """Action chunks disagree in count or per-chunk step length."""


class DegenerateHorizon(EngineError):
    """Literal deviation normalization is undefined for a zero horizon."""


class BackendUnavailable(EngineError):
    """A model backend failed or timed out.

    ``region`` carries the region label when the failure happened inside a
    per-region probe, so callers can report which probe was lost.
    """

    def __init__(self, message: str, region: str | None = None):
        super().__init__(message)
        self.region = region


class ProtocolError(EngineError):
    """A wire message violated the protocol schema.

    ``payload`` is the offending (decoded) message, when available.
    """

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class ProposalParseError(EngineError):
    """Region-proposal text could not be parsed into the two lists."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class RecolorExhausted(EngineError):
    """No neutral recolor passed the sensitivity check within the attempt cap.

    Carries the best (lowest-deviation) candidate so callers can proceed
    with it instead of aborting the episode.
    """

    def __init__(self, message: str, best_image, best_delta: float, attempts: int):
        super().__init__(message)
        self.best_image = best_image
        self.best_delta = best_delta
        self.attempts = attempts


class EmptyCalibrationSet(EngineError):
    """Threshold calibration received no deviation samples."""


class ShapeError(EngineError):
    """Attention tensors have inconsistent or non-square shapes."""


class FlatAttribution(EngineError):
    """Attribution map is constant; no pixels can be ranked."""


class FixtureMissing(EngineError):
    """A stub backend was asked for a fixture it does not have."""


class SceneError(EngineError):
    """A synthetic scene specification is geometrically invalid."""
