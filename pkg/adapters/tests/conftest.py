import numpy as np
import pytest

from visprobe_adapters import protocol
from visprobe_adapters.config import AdapterConfig
from visprobe_adapters.upstream import UpstreamError


def make_config(adapter, **kw):
    return AdapterConfig(
        adapter=adapter, model="test-model", upstream_url="http://upstream.test/api", **kw
    )


class MockUpstream:
    """Records calls and returns canned per-kind replies without network."""

    def __init__(self, kind, fail=False):
        self.kind = kind
        self.fail = fail
        self.calls = []

    def __call__(self, url, payload, headers=None, timeout_s=None):
        self.calls.append({"url": url, "payload": payload, "headers": headers or {}})
        if self.fail:
            raise UpstreamError("simulated upstream outage")
        return getattr(self, f"_{self.kind}")(payload)

    def _vlm(self, payload):
        return {
            "choices": [
                {"message": {"content": "['orange', 'blue mat']\n['wall', 'counter']"}}
            ]
        }

    def _seg(self, payload):
        img = protocol.png_to_array(payload["image"])
        h, w = img.shape[:2]
        detections = []
        for i, label in enumerate(payload["labels"]):
            mask = np.zeros((h, w), dtype=bool)
            mask[i : i + max(2, h // 4), i : i + max(2, w // 4)] = True
            png = protocol.array_to_png(
                np.repeat((mask * 255).astype(np.uint8)[..., None], 3, axis=2)
            )
            detections.append({"label": label, "score": 0.9 - 0.1 * i, "mask": png})
        return {"detections": detections}

    def _inpaint(self, payload):
        img = protocol.png_to_array(payload["init_images"][0])
        out = np.full_like(img, 127)
        return {"images": [protocol.array_to_png(out)]}

    def _vla(self, payload):
        n = payload["samples"]
        chunk = [[0.001, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1]] * 4
        return {"actions": [chunk for _ in range(n)]}


@pytest.fixture()
def tiny_png_b64():
    rng = np.random.default_rng(0)
    return protocol.array_to_png(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
