"""Gateway and scripted-backend tests.

Concurrency checks use an injected per-question delay rather than wall
clock assumptions, and the bounded-concurrency probe counts overlapping
calls directly instead of timing them.
"""

from __future__ import annotations

import json
import threading
import time

import pytest

from segforge.config import Config
from segforge.errors import BatchError, SchemaError, ScriptMissError, UploadError
from segforge.gateway import (
    Completion,
    FileHandle,
    Gateway,
    PromptRequest,
    ScriptedBackend,
    ScriptEntry,
    ScriptStore,
)

HASH_A = "a" * 64
HASH_B = "b" * 64


def store_with(pairs: dict[str, str], file_hash: str = HASH_A) -> ScriptStore:
    store = ScriptStore()
    for question, response in pairs.items():
        store.add(file_hash, question, response)
    return store


def request_for(question: str, request_id: str, file_hash: str = HASH_A) -> PromptRequest:
    handle = FileHandle(provider_file_id="scripted:" + file_hash[:12], content_hash=file_hash)
    return PromptRequest(file=handle, question=question, request_id=request_id)


class TestScriptStore:
    def test_lookup_normalizes_whitespace(self):
        store = store_with({"What  is\nthe total?": "42"})
        assert store.lookup(HASH_A, "What is the total?") == "42"
        assert store.lookup(HASH_A, "  What is the\ttotal?  ") == "42"

    def test_miss_raises_with_context(self):
        store = store_with({"q": "r"})
        with pytest.raises(ScriptMissError) as excinfo:
            store.lookup(HASH_A, "unknown question")
        assert excinfo.value.file_hash == HASH_A
        assert excinfo.value.question == "unknown question"

    def test_wrong_file_hash_misses(self):
        store = store_with({"q": "r"})
        with pytest.raises(ScriptMissError):
            store.lookup(HASH_B, "q")

    def test_conflicting_entry_rejected(self):
        store = store_with({"q": "first"})
        with pytest.raises(SchemaError):
            store.add(HASH_A, "q", "second")

    def test_identical_duplicate_is_allowed(self):
        store = store_with({"q": "same"})
        store.add(HASH_A, "q", "same")
        assert len(store) == 1

    def test_jsonl_roundtrip(self, tmp_path):
        store = store_with({"q1": "r1", "q2": "r2"})
        store.add(HASH_B, "q1", "other file")
        path = tmp_path / "script.jsonl"
        store.dump_jsonl(path)
        reloaded = ScriptStore.from_jsonl(path)
        assert reloaded.entries() == store.entries()
        assert len(reloaded) == 3

    def test_from_jsonl_rejects_bad_json(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"file_hash": "x"\n', encoding="utf-8")
        with pytest.raises(SchemaError):
            ScriptStore.from_jsonl(path)

    def test_from_jsonl_rejects_missing_field(self, tmp_path):
        path = tmp_path / "short.jsonl"
        path.write_text(json.dumps({"file_hash": HASH_A, "question": "q"}) + "\n",
                        encoding="utf-8")
        with pytest.raises(SchemaError):
            ScriptStore.from_jsonl(path)

    def test_from_entries_accepts_dicts_and_objects(self):
        entries = [
            {"file_hash": HASH_A, "question": "q1", "response": "r1"},
            ScriptEntry(file_hash=HASH_A, question="q2", response="r2"),
        ]
        store = ScriptStore.from_entries(entries)
        assert store.lookup(HASH_A, "q1") == "r1"
        assert store.lookup(HASH_A, "q2") == "r2"

    def test_merge_applies_conflict_rules(self):
        left = store_with({"q": "r"})
        right = store_with({"q": "different"})
        with pytest.raises(SchemaError):
            left.merge(right)
        left2 = store_with({"q": "r"})
        left2.merge(store_with({"q2": "r2"}))
        assert len(left2) == 2


class TestPromptRequest:
    def test_blank_question_rejected(self):
        with pytest.raises(ValueError):
            request_for("   ", "req-1")

    def test_blank_request_id_rejected(self):
        with pytest.raises(ValueError):
            request_for("q", "")


class TestScriptedBackend:
    def test_upload_handle_is_deterministic(self):
        backend = ScriptedBackend(ScriptStore())
        handle = backend.upload(HASH_A, b"payload", "doc.htm")
        assert handle == FileHandle(
            provider_file_id="scripted:" + "a" * 12,
            content_hash=HASH_A,
            uploaded_at="",
        )

    def test_ask_replays_script(self):
        backend = ScriptedBackend(store_with({"q": "canned"}))
        completion = backend.ask(request_for("q", "req-1"))
        assert completion == Completion(
            request_id="req-1", text="canned", backend="scripted", latency_ms=0
        )


class TestGatewayUpload:
    def test_upload_once_per_content_hash(self):
        gateway = Gateway(ScriptedBackend(ScriptStore()))
        first = gateway.upload_bytes(b"data", content_hash=HASH_A)
        second = gateway.upload_bytes(b"data", content_hash=HASH_A)
        assert first is second
        assert gateway.upload_calls == 1
        gateway.upload_bytes(b"other", content_hash=HASH_B)
        assert gateway.upload_calls == 2

    def test_cached_document_upload(self, edgar_client):
        ref = edgar_client.resolve_filing(320193, 2024)
        doc = edgar_client.fetch(ref)
        gateway = Gateway(ScriptedBackend(ScriptStore()))
        handle = gateway.upload(doc)
        assert handle.content_hash == doc.content_hash
        assert gateway.upload(doc) is handle

    def test_empty_upload_rejected(self):
        class EmptyDoc:
            content_hash = HASH_A

            class ref:
                primary_document = "x.htm"

            def read_bytes(self):
                return b""

        gateway = Gateway(ScriptedBackend(ScriptStore()))
        with pytest.raises(UploadError):
            gateway.upload(EmptyDoc())


class TestGatewayAsk:
    def test_duplicate_request_id_rejected(self):
        gateway = Gateway(ScriptedBackend(store_with({"q": "r"})))
        gateway.ask(request_for("q", "req-1"))
        with pytest.raises(ValueError):
            gateway.ask(request_for("q", "req-1"))

    def test_transcript_records_every_ask(self):
        gateway = Gateway(ScriptedBackend(store_with({"q1": "r1", "q2": "r2"})))
        gateway.ask(request_for("q1", "req-1"))
        gateway.ask(request_for("q2", "req-2"))
        assert [(r.request_id, r.question, r.response) for r in gateway.transcript] == [
            ("req-1", "q1", "r1"),
            ("req-2", "q2", "r2"),
        ]
        assert all(r.backend == "scripted" for r in gateway.transcript)

    def test_transcript_for_filters_by_file(self):
        store = store_with({"q": "ra"})
        store.add(HASH_B, "q", "rb")
        gateway = Gateway(ScriptedBackend(store))
        gateway.ask(request_for("q", "req-a", HASH_A))
        gateway.ask(request_for("q", "req-b", HASH_B))
        assert [r.response for r in gateway.transcript_for(HASH_A)] == ["ra"]
        assert [r.response for r in gateway.transcript_for(HASH_B)] == ["rb"]

    def test_live_transcript_jsonl(self, tmp_path):
        path = tmp_path / "transcript.jsonl"
        gateway = Gateway(ScriptedBackend(store_with({"q1": "r1", "q2": "r2"})),
                          transcript_path=path)
        gateway.ask(request_for("q1", "req-1"))
        gateway.ask(request_for("q2", "req-2"))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        record = json.loads(lines[0])
        assert record["request_id"] == "req-1"
        assert record["response"] == "r1"

    def test_dump_transcript_sorted_by_request_id(self, tmp_path):
        gateway = Gateway(ScriptedBackend(store_with({"q1": "r1", "q2": "r2"})))
        gateway.ask(request_for("q2", "req-2"))
        gateway.ask(request_for("q1", "req-1"))
        path = tmp_path / "out.jsonl"
        gateway.dump_transcript(path)
        ids = [json.loads(line)["request_id"]
               for line in path.read_text(encoding="utf-8").splitlines()]
        assert ids == ["req-1", "req-2"]


class TestAskMany:
    def test_results_in_input_order_despite_delays(self):
        questions = [f"q{i}" for i in range(6)]
        store = store_with({q: f"r{i}" for i, q in enumerate(questions)})
        delays = {q: 0.05 if i < 2 else 0.0 for i, q in enumerate(questions)}
        backend = ScriptedBackend(store, delay_fn=lambda q: delays[q])
        gateway = Gateway(backend, max_in_flight=6)
        requests = [request_for(q, f"req-{i}") for i, q in enumerate(questions)]
        completions = gateway.ask_many(requests)
        assert [c.text for c in completions] == [f"r{i}" for i in range(6)]

    def test_concurrency_never_exceeds_limit(self):
        lock = threading.Lock()
        active = 0
        peak = 0

        def probe(question: str) -> float:
            nonlocal active, peak
            with lock:
                active += 1
                peak = max(peak, active)
            time.sleep(0.01)
            with lock:
                active -= 1
            return 0.0

        questions = [f"q{i}" for i in range(20)]
        store = store_with({q: "r" for q in questions})
        gateway = Gateway(ScriptedBackend(store, delay_fn=probe), max_in_flight=3)
        requests = [request_for(q, f"req-{i}") for i, q in enumerate(questions)]
        gateway.ask_many(requests)
        assert peak <= 3
        assert peak >= 2

    def test_failures_are_aggregated(self):
        store = store_with({"q0": "r0", "q2": "r2"})
        gateway = Gateway(ScriptedBackend(store))
        requests = [request_for(q, f"req-{i}") for i, q in enumerate(["q0", "q1", "q2"])]
        with pytest.raises(BatchError) as excinfo:
            gateway.ask_many(requests)
        err = excinfo.value
        assert set(err.errors) == {1}
        assert isinstance(err.errors[1], ScriptMissError)
        assert {i: c.text for i, c in err.completions.items()} == {0: "r0", 2: "r2"}

    def test_empty_batch(self):
        gateway = Gateway(ScriptedBackend(ScriptStore()))
        assert gateway.ask_many([]) == []

    def test_bad_limits_rejected(self):
        with pytest.raises(ValueError):
            Gateway(ScriptedBackend(ScriptStore()), max_in_flight=0)
        gateway = Gateway(ScriptedBackend(ScriptStore()))
        with pytest.raises(ValueError):
            gateway.ask_many([request_for("q", "req-1")], max_in_flight=0)

    def test_request_ids_unique_across_batches(self):
        store = store_with({"q": "r"})
        gateway = Gateway(ScriptedBackend(store))
        gateway.ask_many([request_for("q", "req-1")])
        with pytest.raises(BatchError) as excinfo:
            gateway.ask_many([request_for("q", "req-1")])
        assert isinstance(excinfo.value.errors[0], ValueError)


class TestFromConfig:
    def test_scripted_backend_from_config(self, tmp_path):
        script = tmp_path / "script.jsonl"
        store_with({"q": "r"}).dump_jsonl(script)
        config = Config({"llm.script_path": str(script)}, use_env=False)
        gateway = Gateway.from_config(config)
        assert isinstance(gateway.backend, ScriptedBackend)
        assert gateway.max_in_flight == 5
        completion = gateway.ask(request_for("q", "req-1"))
        assert completion.text == "r"

    def test_scripted_backend_requires_script_path(self):
        config = Config({"llm.script_path": ""}, use_env=False)
        with pytest.raises(SchemaError):
            Gateway.from_config(config)

    def test_explicit_store_wins_over_path(self):
        config = Config({"llm.script_path": ""}, use_env=False)
        gateway = Gateway.from_config(config, script_store=store_with({"q": "r"}))
        assert gateway.ask(request_for("q", "req-1")).text == "r"

    def test_unknown_backend_rejected(self):
        config = Config({"llm.backend": "mystery"}, use_env=False)
        with pytest.raises(SchemaError):
            Gateway.from_config(config)
