"""Reference adapters bridging hosted models to the backend wire protocol."""

from .adapters import ADAPTERS, InpaintAdapter, SegAdapter, VLAAdapter, VLMAdapter, make_dispatch
from .config import AdapterConfig, ConfigError

__all__ = [
    "ADAPTERS",
    "InpaintAdapter",
    "SegAdapter",
    "VLAAdapter",
    "VLMAdapter",
    "make_dispatch",
    "AdapterConfig",
    "ConfigError",
]
