"""Stdio protocol server for one adapter.

Usage: ``visprobe-adapter --adapter vlm --config vlm.json``

The loop is strictly sequential (one upstream request in flight), which
keeps hosted-model rate limits safe by construction. Missing credentials
or a bad config abort startup with a nonzero exit before any request is
read.
"""

from __future__ import annotations

import argparse
import json
import sys

from .adapters import ADAPTERS, make_dispatch
from .config import AdapterConfig, ConfigError
from . import protocol


def serve(dispatch, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as e:
            response = protocol.error({}, "protocol", f"undecodable request: {e}")
        else:
            try:
                response = dispatch(request)
            except Exception as e:  # adapter bugs must not kill the server
                response = protocol.error(request, "unavailable", f"adapter crashed: {e}")
        stdout.write(json.dumps(response, sort_keys=True, separators=(",", ":")) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="visprobe-adapter")
    parser.add_argument("--adapter", choices=sorted(ADAPTERS), required=True)
    parser.add_argument("--config", required=True)
    args = parser.parse_args(argv)
    try:
        config = AdapterConfig.load(args.config)
        adapter = ADAPTERS[args.adapter](config)
    except ConfigError as e:
        print(json.dumps({"error": "ConfigError", "message": str(e)}), file=sys.stderr)
        return 1
    serve(make_dispatch(adapter))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
