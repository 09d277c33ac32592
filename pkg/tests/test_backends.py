import http.server
import json
import sys
import threading

import numpy as np
import pytest

from visprobe.backends.clients import local_testbed_suite, suite_from_transport
from visprobe.backends.protocol import (
    chunks_from_wire,
    make_request,
    validate_message,
)
from visprobe.backends.stubs import build_stub_dispatch, stub_dispatch_for_scene
from visprobe.backends.transports import (
    BackendEndpoint,
    HTTPTransport,
    LocalTransport,
    ReplayTransport,
    SubprocessTransport,
    Transcript,
    call,
)
from visprobe.core import canonical_json, dilate_mask
from visprobe.errors import BackendUnavailable, FixtureMissing, ProtocolError
from visprobe.intervene import onion_peel_fill
from visprobe.testbed import render


@pytest.fixture()
def scene_suite(standard_scene):
    return local_testbed_suite(standard_scene, seed=0)


class TestProtocol:
    def test_request_roundtrip_validates(self):
        req = make_request("predict_req", 3, image="abc", instruction="go", k=2)
        assert validate_message(req) is req

    def test_unknown_type_rejected(self):
        with pytest.raises(ProtocolError):
            validate_message({"v": "1", "id": 1, "type": "mystery_req"})

    def test_missing_field_rejected(self):
        with pytest.raises(ProtocolError):
            validate_message({"v": "1", "id": 1, "type": "predict_req", "image": "x"})

    def test_wrong_version_rejected(self):
        with pytest.raises(ProtocolError):
            validate_message(
                {"v": "2", "id": 1, "type": "predict_req", "image": "x",
                 "instruction": "y", "k": 1}
            )

    def test_chunk_count_mismatch(self):
        rows = [[[0, 0, 0, 0, 0, 0, 0.5]]]
        with pytest.raises(ProtocolError):
            chunks_from_wire(rows, k=2)

    def test_chunk_bad_gripper(self):
        rows = [[[0, 0, 0, 0, 0, 0, 2.0]]]
        with pytest.raises(ProtocolError):
            chunks_from_wire(rows, k=1)

    def test_chunk_ragged_lengths(self):
        rows = [
            [[0, 0, 0, 0, 0, 0, 0.5]],
            [[0, 0, 0, 0, 0, 0, 0.5], [0, 0, 0, 0, 0, 0, 0.5]],
        ]
        with pytest.raises(ProtocolError):
            chunks_from_wire(rows, k=2)


class TestCall:
    def test_id_echo(self, scene_suite, standard_render):
        img, _ = standard_render
        req = make_request(
            "predict_req", 41, image=_b64(img), instruction="task", k=1
        )
        resp = call(scene_suite.policy.endpoint, req)
        assert resp["id"] == 41

    def test_id_mismatch_is_protocol_error(self, standard_render):
        img, _ = standard_render

        def bad_handler(req):
            return {"v": "1", "id": req["id"] + 1, "type": "predict_resp", "chunks": []}

        ep = BackendEndpoint(transport=LocalTransport(bad_handler))
        req = make_request("predict_req", 1, image=_b64(img), instruction="x", k=1)
        with pytest.raises(ProtocolError):
            call(ep, req)

    def test_malformed_response_schema(self, standard_render):
        img, _ = standard_render

        def bad_handler(req):
            return {"v": "1", "id": req["id"], "type": "predict_resp"}  # no chunks

        ep = BackendEndpoint(transport=LocalTransport(bad_handler))
        req = make_request("predict_req", 1, image=_b64(img), instruction="x", k=1)
        with pytest.raises(ProtocolError):
            call(ep, req)

    def test_error_resp_code_mapping(self, standard_render):
        img, _ = standard_render

        def erroring(req):
            return {"v": "1", "id": req["id"], "type": "error_resp",
                    "code": "fixture_missing", "message": "nope"}

        ep = BackendEndpoint(transport=LocalTransport(erroring))
        req = make_request("propose_req", 1, image=_b64(img), instruction="x",
                           template_id="t")
        with pytest.raises(FixtureMissing):
            call(ep, req)

    def test_retries_then_unavailable(self, standard_render):
        img, _ = standard_render
        attempts = []

        class Flaky:
            def exchange(self, payload, timeout_s):
                attempts.append(1)
                raise BackendUnavailable("timeout")

            def close(self):
                pass

        ep = BackendEndpoint(transport=Flaky(), retries=2)
        req = make_request("predict_req", 1, image=_b64(img), instruction="x", k=1)
        with pytest.raises(BackendUnavailable):
            call(ep, req)
        assert len(attempts) == 3

    def test_malformed_failure_leaves_client_usable(self, standard_scene, standard_render):
        # protocol robustness: a bad response must not corrupt later calls
        img, _ = standard_render
        good = stub_dispatch_for_scene(standard_scene)
        fail_next = {"on": True}

        def flaky(req):
            if fail_next["on"] and req["type"] == "predict_req":
                fail_next["on"] = False
                return {"v": "1", "id": req["id"], "type": "predict_resp", "chunks": [[[1e9]]]}
            return good(req)

        suite = suite_from_transport(LocalTransport(flaky))
        with pytest.raises(ProtocolError):
            suite.policy.predict(img, "task", 2)
        chunks = suite.policy.predict(img, "task", 2)
        assert len(chunks) == 2


def _b64(img):
    from visprobe.backends.protocol import image_to_b64

    return image_to_b64(img)


class TestStubs:
    def test_stub_policy_deterministic(self, standard_scene, standard_render):
        img, _ = standard_render
        suite_a = local_testbed_suite(standard_scene, seed=5)
        suite_b = local_testbed_suite(standard_scene, seed=5)
        ca = suite_a.policy.predict(img, standard_scene.instruction, 3)
        cb = suite_b.policy.predict(img, standard_scene.instruction, 3)
        assert all(x == y for x, y in zip(ca, cb))

    def test_stub_seg_exact_rle(self, scene_suite, standard_scene, standard_render):
        img, truth = standard_render
        got = scene_suite.seg.segment(img, ["blue towel"], 0.4, 0.4)
        assert len(got) == 1
        label, score, mask = got[0]
        assert label == "blue towel"
        assert np.array_equal(mask, truth["blue towel"].mask)

    def test_stub_inpaint_equals_direct_path(self, scene_suite, standard_render, cfg):
        img, truth = standard_render
        region = truth["blue towel"]
        via_wire = scene_suite.inpaint.inpaint(img, region, cfg.dilation_radius)
        direct = onion_peel_fill(img, dilate_mask(region, cfg.dilation_radius).mask)
        assert via_wire == direct

    def test_stub_attn_tensor_shapes(self, scene_suite, standard_render, cfg):
        img, _ = standard_render
        t = scene_suite.attn.attention(img, "task", cfg.attn_layer)
        assert t.attn.shape == t.grad.shape
        assert t.side * t.side == t.tokens

    def test_dispatch_unknown_backend_is_unavailable(self, standard_render):
        img, _ = standard_render
        dispatch = build_stub_dispatch()  # no handlers at all
        suite = suite_from_transport(LocalTransport(dispatch))
        with pytest.raises(BackendUnavailable):
            suite.policy.predict(img, "x", 1)


class TestTranscript:
    def test_record_and_replay_byte_exact(self, standard_scene, standard_render):
        img, truth = standard_render
        suite = local_testbed_suite(standard_scene, seed=1)
        chunks = suite.policy.predict(img, standard_scene.instruction, 2)
        masks = suite.seg.segment(img, ["green cup"], 0.4, 0.4)
        recorded = suite.transcript
        assert len(recorded.entries) == 2

        replay = suite_from_transport(ReplayTransport(recorded))
        chunks2 = replay.policy.predict(img, standard_scene.instruction, 2)
        masks2 = replay.seg.segment(img, ["green cup"], 0.4, 0.4)
        assert all(a == b for a, b in zip(chunks, chunks2))
        assert masks[0][0] == masks2[0][0]
        assert np.array_equal(masks[0][2], masks2[0][2])
        # the replay run produced identical wire bytes
        assert replay.transcript.entries == recorded.entries

    def test_replay_divergence_detected(self, standard_scene, standard_render):
        img, _ = standard_render
        suite = local_testbed_suite(standard_scene, seed=1)
        suite.policy.predict(img, standard_scene.instruction, 2)
        replay = suite_from_transport(ReplayTransport(suite.transcript))
        with pytest.raises(ProtocolError):
            replay.policy.predict(img, "a different instruction", 2)

    def test_transcript_file_roundtrip(self, tmp_path, standard_scene, standard_render):
        img, _ = standard_render
        suite = local_testbed_suite(standard_scene, seed=1)
        suite.policy.predict(img, standard_scene.instruction, 1)
        path = tmp_path / "transcript.jsonl"
        suite.transcript.save(path)
        loaded = Transcript.load(path)
        assert loaded.entries == suite.transcript.entries
        assert loaded.request_types() == ["predict_req"]

    def test_committed_golden_transcript_replays(self, standard_scene):
        # the shipped transcript re-validates byte-for-byte against a fresh
        # run of the same pipeline stage
        from pathlib import Path

        from visprobe.core import PipelineConfig
        from visprobe.regions import ground_regions, propose_regions
        from visprobe.sensitivity import probe_all

        golden = Transcript.load(
            Path(__file__).parent.parent / "protocol" / "golden_stub_transcript.jsonl"
        )
        img, _ = render(standard_scene)
        cfg = PipelineConfig()
        replay = suite_from_transport(ReplayTransport(golden))
        proposal = propose_regions(replay.vlm, img, standard_scene.instruction)
        grounding = ground_regions(
            replay.seg, img, proposal, cfg.box_threshold, cfg.text_threshold
        )
        report = probe_all(
            replay.policy, img, standard_scene.instruction, grounding.masks, cfg, seed=1
        )
        assert replay.transcript.entries == golden.entries
        assert set(report.sensitive_labels()) == {"blue towel", "green cup", "counter"}


class TestSubprocessTransport:
    def test_roundtrip_via_stub_server(self, tmp_path, standard_scene, standard_render):
        img, _ = standard_render
        scene_path = tmp_path / "scene.json"
        standard_scene.save(scene_path)
        transport = SubprocessTransport(
            [sys.executable, "-m", "visprobe.backends.stub_server",
             "--scene", str(scene_path), "--seed", "0"]
        )
        try:
            suite = suite_from_transport(transport, timeout_ms=60000)
            chunks = suite.policy.predict(img, standard_scene.instruction, 2)
            assert len(chunks) == 2
            # identical to the in-process stub path
            local = local_testbed_suite(standard_scene, seed=0)
            want = local.policy.predict(img, standard_scene.instruction, 2)
            assert all(a == b for a, b in zip(chunks, want))
        finally:
            transport.close()

    def test_timeout_is_unavailable(self):
        transport = SubprocessTransport([sys.executable, "-c", "import time; time.sleep(60)"])
        try:
            ep = BackendEndpoint(transport=transport, timeout_ms=300)
            req = make_request("propose_req", 1, image="", instruction="x", template_id="t")
            with pytest.raises(BackendUnavailable):
                call(ep, req)
        finally:
            transport.close()


class TestHTTPTransport:
    def test_roundtrip(self, standard_scene, standard_render):
        img, _ = standard_render
        dispatch = stub_dispatch_for_scene(standard_scene)

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                raw = self.rfile.read(int(self.headers["Content-Length"]))
                resp = canonical_json(dispatch(json.loads(raw))).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(resp)))
                self.end_headers()
                self.wfile.write(resp)

            def log_message(self, *a):
                pass

        server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_address[1]}/"
            suite = suite_from_transport(HTTPTransport(url))
            chunks = suite.policy.predict(img, standard_scene.instruction, 1)
            assert len(chunks) == 1
        finally:
            server.shutdown()

    def test_unreachable_is_unavailable(self, standard_render):
        img, _ = standard_render
        ep = BackendEndpoint(transport=HTTPTransport("http://127.0.0.1:9/"), timeout_ms=500)
        req = make_request("predict_req", 1, image=_b64(img), instruction="x", k=1)
        with pytest.raises(BackendUnavailable):
            call(ep, req)


class TestRequestIds:
    def test_monotone_shared_counter(self, standard_scene, standard_render):
        img, _ = standard_render
        suite = local_testbed_suite(standard_scene)
        suite.policy.predict(img, standard_scene.instruction, 1)
        suite.seg.segment(img, ["green cup"], 0.4, 0.4)
        suite.vlm.propose(img, standard_scene.instruction, "prompt/1")
        ids = [json.loads(req)["id"] for req, _ in suite.transcript.entries]
        assert ids == sorted(ids)
        assert len(set(ids)) == len(ids)
