"""Stdio protocol server exposing the testbed stubs.

Usage: ``python -m visprobe.backends.stub_server --scene scene.json [--seed N]``
"""

from __future__ import annotations

import argparse

from ..testbed import SceneSpec
from .clients import serve_stdio
from .stubs import stub_dispatch_for_scene


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="testbed stub backend over stdio")
    parser.add_argument("--scene", required=True, help="scene spec JSON file")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    scene = SceneSpec.load(args.scene)
    serve_stdio(stub_dispatch_for_scene(scene, seed=args.seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
