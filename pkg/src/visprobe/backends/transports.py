"""Transports, retries, and replayable transcripts.

All transports exchange canonical-JSON strings, one message per call.
``call`` is the single entry point: it validates both directions, retries
timeouts, maps error responses to typed exceptions, and records traffic
into a transcript whose replay is byte-exact.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from ..core import canonical_json
from ..errors import BackendUnavailable, FixtureMissing, ProtocolError
from .protocol import validate_message

_ERROR_CODES = {
    "fixture_missing": FixtureMissing,
    "unavailable": BackendUnavailable,
    "upstream": BackendUnavailable,
}


class Transcript:
    """Ordered record of (request, response) wire strings."""

    def __init__(self):
        self.entries: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def record(self, request: str, response: str) -> None:
        with self._lock:
            self.entries.append((request, response))

    def request_types(self) -> list[str]:
        return [json.loads(req).get("type") for req, _ in self.entries]

    def save(self, path) -> None:
        with open(path, "w") as f:
            for req, resp in self.entries:
                f.write(canonical_json({"req": req, "resp": resp}) + "\n")

    @staticmethod
    def load(path) -> "Transcript":
        t = Transcript()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            t.entries.append((d["req"], d["resp"]))
        return t


class LocalTransport:
    """In-process handler behind a full JSON round-trip, for stub suites."""

    def __init__(self, handler):
        self._handler = handler

    def exchange(self, payload: str, timeout_s: float) -> str:
        request = json.loads(payload)
        return canonical_json(self._handler(request))

    def close(self) -> None:
        pass


class ReplayTransport:
    """Feeds back a recorded transcript, verifying each request byte-for-byte."""

    def __init__(self, transcript: Transcript):
        self._entries = list(transcript.entries)
        self._pos = 0
        self._lock = threading.Lock()

    def exchange(self, payload: str, timeout_s: float) -> str:
        with self._lock:
            if self._pos >= len(self._entries):
                raise ProtocolError("replay transcript exhausted", payload=payload)
            expected, response = self._entries[self._pos]
            self._pos += 1
        if payload != expected:
            raise ProtocolError(
                "request diverged from transcript", payload={"got": payload, "want": expected}
            )
        return response

    def close(self) -> None:
        pass


class SubprocessTransport:
    """Line-delimited JSON over a child process's stdio."""

    def __init__(self, argv: list):
        self._argv = list(argv)
        self._proc = None
        self._queue: queue.Queue = queue.Queue()
        self._lock = threading.Lock()

    def _ensure(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        self._proc = subprocess.Popen(
            self._argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._queue = queue.Queue()

        def reader(proc, out):
            for line in proc.stdout:
                out.put(line)

        threading.Thread(target=reader, args=(self._proc, self._queue), daemon=True).start()

    def exchange(self, payload: str, timeout_s: float) -> str:
        with self._lock:
            self._ensure()
            try:
                self._proc.stdin.write(payload + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise BackendUnavailable(f"backend process write failed: {e}") from e
            try:
                return self._queue.get(timeout=timeout_s).strip()
            except queue.Empty:
                raise BackendUnavailable(
                    f"backend process gave no response within {timeout_s:.1f}s"
                ) from None

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class HTTPTransport:
    """One POST per message; the body is the JSON request."""

    def __init__(self, url: str):
        self.url = url

    def exchange(self, payload: str, timeout_s: float) -> str:
        req = urllib.request.Request(
            self.url,
            data=payload.encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout_s) as resp:
                return resp.read().decode("utf-8")
        except (urllib.error.URLError, TimeoutError, OSError) as e:
            raise BackendUnavailable(f"HTTP backend failed: {e}") from e


@dataclass
class BackendEndpoint:
    """A transport plus its call policy."""

    transport: object
    timeout_ms: int = 30000
    retries: int = 0
    transcript: Transcript | None = None

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")


def call(endpoint: BackendEndpoint, request: dict) -> dict:
    """Send one validated request; return the schema-validated response.

    Timeouts are retried up to ``endpoint.retries`` times and then raise
    BackendUnavailable. Anything structurally wrong in the response raises
    ProtocolError with the offending payload. ``error_resp`` maps to the
    exception class its code names.
    """
    validate_message(request)
    payload = canonical_json(request)
    timeout_s = endpoint.timeout_ms / 1000.0
    last: Exception | None = None
    for _ in range(endpoint.retries + 1):
        try:
            raw = endpoint.transport.exchange(payload, timeout_s)
        except BackendUnavailable as e:
            last = e
            continue
        if endpoint.transcript is not None:
            endpoint.transcript.record(payload, raw)
        try:
            response = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"undecodable response: {e}", payload=raw) from e
        validate_message(response)
        if response["id"] != request["id"]:
            raise ProtocolError(
                f"response id {response['id']} does not echo request id {request['id']}",
                payload=response,
            )
        if response["type"] == "error_resp":
            exc = _ERROR_CODES.get(response["code"], BackendUnavailable)
            raise exc(f"backend error {response['code']}: {response['message']}")
        expected = request["type"].replace("_req", "_resp")
        if response["type"] != expected:
            raise ProtocolError(
                f"expected {expected}, got {response['type']}", payload=response
            )
        return response
    raise BackendUnavailable(f"backend unavailable after {endpoint.retries + 1} attempts: {last}")
