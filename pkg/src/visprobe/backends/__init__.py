"""Wire protocol, transports, typed clients, and deterministic stub backends."""

from .protocol import (
    PROTOCOL_VERSION,
    chunks_from_wire,
    chunks_to_wire,
    image_from_b64,
    image_to_b64,
    make_request,
    validate_message,
)
from .transports import (
    BackendEndpoint,
    HTTPTransport,
    LocalTransport,
    ReplayTransport,
    SubprocessTransport,
    Transcript,
    call,
)
from .clients import (
    AttnClient,
    BackendSuite,
    InpaintClient,
    PolicyClient,
    RequestIds,
    SegClient,
    VLMClient,
    local_testbed_suite,
    serve_stdio,
)
from .stubs import (
    StubAttn,
    StubInpaint,
    StubPolicy,
    StubSeg,
    StubVLM,
    build_stub_dispatch,
)

__all__ = [
    "PROTOCOL_VERSION",
    "chunks_from_wire",
    "chunks_to_wire",
    "image_from_b64",
    "image_to_b64",
    "make_request",
    "validate_message",
    "BackendEndpoint",
    "HTTPTransport",
    "LocalTransport",
    "ReplayTransport",
    "SubprocessTransport",
    "Transcript",
    "call",
    "AttnClient",
    "BackendSuite",
    "InpaintClient",
    "PolicyClient",
    "RequestIds",
    "SegClient",
    "VLMClient",
    "local_testbed_suite",
    "serve_stdio",
    "StubAttn",
    "StubInpaint",
    "StubPolicy",
    "StubSeg",
    "StubVLM",
    "build_stub_dispatch",
]
