"""Minimal HTTP client for hosted-model calls, with an injectable transport.

Tests swap ``post_json`` for a mock, so the whole suite runs without
network access. One request is in flight at a time per adapter process
(the stdio loop is sequential), which doubles as rate-limit safety for
hosted APIs.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request


class UpstreamError(Exception):
    pass


def post_json(url: str, payload: dict, headers: dict | None = None, timeout_s: float = 30.0) -> dict:
    req = urllib.request.Request(
        url,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json", **(headers or {})},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout_s) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as e:
        raise UpstreamError(f"upstream call to {url} failed: {e}") from e
