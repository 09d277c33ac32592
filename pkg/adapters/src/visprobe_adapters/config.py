"""Adapter configuration: model endpoints, credential env-var names, limits.

Credential values never live in config files; configs name the environment
variable that holds each secret, and startup fails cleanly when a named
variable is missing.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class AdapterConfig:
    adapter: str
    model: str = ""
    upstream_url: str = ""
    api_key_env: str | None = None
    template_path: str | None = None
    timeout_s: float = 30.0
    max_in_flight: int = 1
    extra: dict = field(default_factory=dict)

    @staticmethod
    def load(path) -> "AdapterConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read adapter config {path}: {e}") from e
        known = {f for f in AdapterConfig.__dataclass_fields__ if f != "extra"}
        kwargs = {k: v for k, v in raw.items() if k in known}
        extra = {k: v for k, v in raw.items() if k not in known}
        if "adapter" not in kwargs:
            raise ConfigError("adapter config must name its 'adapter'")
        for key, value in raw.items():
            if "key" in key.lower() and key != "api_key_env" and isinstance(value, str):
                raise ConfigError(
                    f"config field {key!r} looks like a credential; use api_key_env"
                )
        return AdapterConfig(extra=extra, **kwargs)

    def api_key(self) -> str | None:
        if self.api_key_env is None:
            return None
        value = os.environ.get(self.api_key_env)
        if not value:
            raise ConfigError(
                f"credential variable {self.api_key_env} is not set in the environment"
            )
        return value
