import json

import httpx
import pytest

from pathproforma.backends import (
    CompletionRequest,
    LiveBackend,
    MockBackend,
    MockScript,
    ScriptEntry,
)
from pathproforma.errors import (
    AuthError,
    ScriptError,
    ScriptMissError,
    TranscriptionEmptyError,
    TransportError,
    UnsupportedFormatError,
)


def _script(**entry_kwargs):
    defaults = dict(truth="High", accuracy=1.0, malformed_prob=0.0)
    defaults.update(entry_kwargs)
    return MockScript(
        seed=101,
        entries={("r1", "histologic_grade"): ScriptEntry(**defaults)},
        ocr_texts={"r1.png": "Scanned report text.", "blank.png": "   "},
    )


def _request(n=20, purpose="extract_a"):
    return CompletionRequest(
        prompt="anything",
        n_samples=n,
        report_id="r1",
        field_id="histologic_grade",
        purpose=purpose,
    )


class TestMockBackend:
    def test_noise_free_script_yields_identical_truths(self):
        backend = MockBackend(_script())
        batch = backend.complete(_request())
        assert len(batch.raw_texts) == 20
        assert set(batch.raw_texts) == {json.dumps({"Histologic Grade": "High"})}

    def test_same_seed_is_byte_identical(self):
        script = _script(accuracy=0.6, distractors={"Low": 1.0}, malformed_prob=0.1)
        first = MockBackend(script).complete(_request())
        second = MockBackend(script).complete(_request())
        assert first.raw_texts == second.raw_texts

    def test_order_independence(self):
        # Drawing other requests first must not shift this one's stream.
        script = _script(accuracy=0.6, distractors={"Low": 1.0})
        backend = MockBackend(script)
        bare = backend.complete(_request())
        backend2 = MockBackend(script)
        backend2.complete(_request(purpose="extract_b"))
        interleaved = backend2.complete(_request())
        assert bare.raw_texts == interleaved.raw_texts

    def test_marginal_accuracy(self):
        script = _script(accuracy=0.8, distractors={"Low": 1.0})
        backend = MockBackend(script)
        batch = backend.complete(_request(n=10_000))
        truth = json.dumps({"Histologic Grade": "High"})
        rate = sum(1 for t in batch.raw_texts if t == truth) / 10_000
        assert abs(rate - 0.8) <= 0.02

    def test_malformed_draws_are_unparseable(self):
        script = _script(accuracy=0.0, malformed_prob=1.0)
        backend = MockBackend(script)
        batch = backend.complete(_request())
        assert all("{" not in text for text in batch.raw_texts)

    def test_unscripted_key_raises(self):
        backend = MockBackend(_script())
        request = CompletionRequest(
            prompt="x", n_samples=1, report_id="r9", field_id="histologic_grade",
            purpose="extract_a",
        )
        with pytest.raises(ScriptMissError):
            backend.complete(request)

    def test_script_invariants_enforced(self):
        with pytest.raises(ScriptError):
            ScriptEntry(truth="x", accuracy=0.9, malformed_prob=0.2)
        with pytest.raises(ScriptError):
            ScriptEntry(truth="x", accuracy=0.5, distractors={"y": 0.7})
        with pytest.raises(ScriptError):
            ScriptEntry(truth="x", accuracy=0.5)

    def test_script_file_round_trip(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(
            json.dumps(
                {
                    "seed": 5,
                    "entries": {
                        "r1::histologic_grade": {
                            "truth": "High",
                            "accuracy": 0.9,
                            "distractors": {"Low": 1.0},
                            "malformed_prob": 0.05,
                            "endorse_confidence": [80, 95],
                        }
                    },
                    "ocr_texts": {"img.png": "hello"},
                }
            )
        )
        script = MockScript.load(path)
        assert script.seed == 5
        entry = script.entries[("r1", "histologic_grade")]
        assert entry.endorse_confidence == (80, 95)
        assert script.ocr_texts["img.png"] == "hello"

    def test_transcribe_contract(self):
        backend = MockBackend(_script())
        assert backend.transcribe(b"...", "png", image_id="r1.png") == "Scanned report text."
        with pytest.raises(ScriptMissError):
            backend.transcribe(b"...", "png", image_id="missing.png")
        with pytest.raises(UnsupportedFormatError):
            backend.transcribe(b"...", "tiff", image_id="r1.png")
        with pytest.raises(TranscriptionEmptyError):
            backend.transcribe(b"...", "png", image_id="blank.png")


def _chat_body(texts):
    return {
        "choices": [{"message": {"role": "assistant", "content": t}} for t in texts]
    }


def _live(handler, attempts=4, key="secret"):
    transport = httpx.MockTransport(handler)
    client = httpx.Client(transport=transport)
    return LiveBackend(
        base_url="https://llm.example",
        model="test-model",
        api_key=key,
        retry_attempts=attempts,
        client=client,
        sleep=lambda _s: None,
    )


class TestLiveBackend:
    def test_missing_credential(self, monkeypatch):
        monkeypatch.delenv("LMM_API_KEY", raising=False)
        with pytest.raises(AuthError):
            LiveBackend(base_url="https://llm.example", model="m")

    def test_complete_happy_path(self):
        seen = {}

        def handler(request):
            seen["payload"] = json.loads(request.content)
            seen["auth"] = request.headers.get("authorization")
            n = seen["payload"]["n"]
            return httpx.Response(200, json=_chat_body([f"t{i}" for i in range(n)]))

        backend = _live(handler)
        batch = backend.complete(
            CompletionRequest(prompt="p", n_samples=5, temperature=0.7, max_tokens=64)
        )
        assert batch.raw_texts == ("t0", "t1", "t2", "t3", "t4")
        assert seen["payload"]["model"] == "test-model"
        assert seen["payload"]["response_format"] == {"type": "json_object"}
        assert seen["auth"] == "Bearer secret"

    def test_tops_up_short_batches(self):
        calls = []

        def handler(request):
            calls.append(json.loads(request.content)["n"])
            return httpx.Response(200, json=_chat_body(["one"]))

        backend = _live(handler)
        batch = backend.complete(CompletionRequest(prompt="p", n_samples=3))
        assert len(batch.raw_texts) == 3
        assert calls == [3, 2, 1]

    def test_retries_429_then_succeeds(self):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) == 1:
                return httpx.Response(429, json={"error": "slow down"})
            return httpx.Response(200, json=_chat_body(["ok"]))

        backend = _live(handler)
        batch = backend.complete(CompletionRequest(prompt="p", n_samples=1))
        assert batch.raw_texts == ("ok",)
        assert len(calls) == 2

    def test_retry_budget_exhausted(self):
        def handler(request):
            return httpx.Response(503)

        backend = _live(handler, attempts=3)
        with pytest.raises(TransportError):
            backend.complete(CompletionRequest(prompt="p", n_samples=1))

    def test_auth_rejection_is_fatal(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(401)

        backend = _live(handler)
        with pytest.raises(AuthError):
            backend.complete(CompletionRequest(prompt="p", n_samples=1))
        assert len(calls) == 1

    def test_no_retry_on_plain_4xx(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(400, text="bad request")

        backend = _live(handler)
        with pytest.raises(TransportError):
            backend.complete(CompletionRequest(prompt="p", n_samples=1))
        assert len(calls) == 1

    def test_transcribe_sends_image_and_reads_text(self):
        seen = {}

        def handler(request):
            seen["payload"] = json.loads(request.content)
            return httpx.Response(200, json=_chat_body(["the transcription"]))

        backend = _live(handler)
        text = backend.transcribe(b"\x89PNG...", "png", image_id="scan.png")
        assert text == "the transcription"
        content = seen["payload"]["messages"][0]["content"]
        kinds = [part["type"] for part in content]
        assert kinds == ["text", "image_url"]
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_transcribe_empty_is_error(self):
        def handler(request):
            return httpx.Response(200, json=_chat_body(["   "]))

        backend = _live(handler)
        with pytest.raises(TranscriptionEmptyError):
            backend.transcribe(b"...", "jpeg")

    def test_transcribe_rejects_unknown_format(self):
        backend = _live(lambda request: httpx.Response(200, json=_chat_body(["x"])))
        with pytest.raises(UnsupportedFormatError):
            backend.transcribe(b"...", "tiff")
