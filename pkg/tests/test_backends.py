from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cogos.backends import (
    AmbiguousMatchers,
    BackendError,
    BudgetExceeded,
    CompletionRequest,
    ImagePayload,
    NotVisionCapable,
    RecordingBackend,
    RemoteBackend,
    RemoteError,
    ScriptedBackend,
    ScriptEntry,
    ScriptMiss,
    ScriptParseError,
    load_script,
    sha256_hex,
)


def req(prompt: str, image: ImagePayload | None = None) -> CompletionRequest:
    return CompletionRequest(prompt, image=image)


class TestRequest:
    def test_validation(self):
        with pytest.raises(ValueError):
            CompletionRequest("p", temperature=-0.1)
        with pytest.raises(ValueError):
            CompletionRequest("p", max_tokens=0)

    def test_digest(self):
        assert req("abc").digest == sha256_hex("abc")


class TestScripted:
    def test_turns_in_order(self):
        b = ScriptedBackend.from_responses(['SAY("hi")', "FINISH"])
        assert [b.complete(req("x")), b.complete(req("y"))] == ['SAY("hi")', "FINISH"]

    def test_miss_carries_digest(self):
        b = ScriptedBackend.from_responses(["FINISH"])
        b.complete(req("x"))
        with pytest.raises(ScriptMiss) as info:
            b.complete(req("y"))
        assert info.value.digest == sha256_hex("y")

    def test_hash_matcher(self):
        b = ScriptedBackend([ScriptEntry("A", prompt_sha256=sha256_hex("p1")),
                             ScriptEntry("B", prompt_sha256=sha256_hex("p2"))])
        assert b.complete(req("p2")) == "B"
        with pytest.raises(ScriptMiss):
            b.complete(req("p3"))

    def test_contains_matcher(self):
        b = ScriptedBackend([ScriptEntry("A", contains="apple"), ScriptEntry("B", contains="cup")])
        assert b.complete(req("bring the cup")) == "B"

    def test_contains_fires_twice_at_runtime(self):
        b = ScriptedBackend([ScriptEntry("A", contains="apple"), ScriptEntry("B", contains="cup")])
        with pytest.raises(AmbiguousMatchers):
            b.complete(req("apple cup"))

    @pytest.mark.parametrize("entries", [
        [ScriptEntry("A", turn=0), ScriptEntry("B", contains="x")],
        [ScriptEntry("A", prompt_sha256="h"), ScriptEntry("B", prompt_sha256="h")],
        [ScriptEntry("A", turn=1), ScriptEntry("B", turn=1)],
        [ScriptEntry("A", contains="cup"), ScriptEntry("B", contains="red cup")],
        [ScriptEntry("A", contains="")],
    ])
    def test_ambiguity_checked_at_load(self, entries):
        with pytest.raises(AmbiguousMatchers):
            ScriptedBackend(entries)

    def test_vision_keyed_on_image_digest(self):
        img = ImagePayload(b"frame-1")
        b = ScriptedBackend([ScriptEntry("a red can", prompt_sha256=sha256_hex("what?"), image_sha256=img.digest)],
                            vision=True)
        assert b.complete_vision(req("what?", img)) == "a red can"
        with pytest.raises(ScriptMiss):
            b.complete_vision(req("what?", ImagePayload(b"frame-2")))

    def test_not_vision_capable(self):
        with pytest.raises(NotVisionCapable):
            ScriptedBackend([]).complete_vision(req("x", ImagePayload(b"i")))

    def test_budget(self):
        b = ScriptedBackend.from_responses(["a", "b"], max_calls=1)
        b.complete(req("x"))
        with pytest.raises(BudgetExceeded):
            b.complete(req("x"))

    @given(st.lists(st.text(max_size=10), max_size=10), st.lists(st.text(max_size=10), max_size=12))
    def test_pure(self, responses, prompts):
        def run():
            b = ScriptedBackend.from_responses(responses)
            out = []
            for p in prompts:
                try:
                    out.append(b.complete(req(p)))
                except ScriptMiss as exc:
                    out.append(("miss", exc.digest))
            return out
        assert run() == run()


class TestLoadScript:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text("", encoding="utf-8")
        with pytest.raises(ScriptMiss):
            load_script(p).complete(req("x"))

    def test_duplicate_hash(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"prompt_sha256": "ab", "response": "1"}\n{"prompt_sha256": "ab", "response": "2"}\n')
        with pytest.raises(AmbiguousMatchers):
            load_script(p)

    @pytest.mark.parametrize("line", [
        "not json",
        "[1, 2]",
        '{"turn": 0}',
        '{"response": "x"}',
        '{"turn": 0, "contains": "a", "response": "x"}',
        '{"turn": -1, "response": "x"}',
        '{"turn": 0, "response": "x", "extra": 1}',
        '{"contains": "a", "image_sha256": "b", "response": "x"}',
    ])
    def test_parse_errors_have_line_numbers(self, tmp_path, line):
        p = tmp_path / "s.jsonl"
        p.write_text('{"turn": 0, "response": "ok"}\n' + line + "\n", encoding="utf-8")
        with pytest.raises(ScriptParseError) as info:
            load_script(p)
        assert info.value.lineno == 2

    def test_golden_scripts_load(self, scenarios):
        for path in sorted((scenarios / "scripts").glob("*.jsonl")):
            load_script(path)


def mock_client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def ok(text: str) -> httpx.Response:
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


class TestRemote:
    def test_retries_then_succeeds(self):
        calls = []
        sleeps: list[float] = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(json.loads(request.content))
            return httpx.Response(500, text="boom") if len(calls) <= 2 else ok("FINISH")

        b = RemoteBackend("http://model/v1/chat/completions", "m", "secret", client=mock_client(handler),
                          sleep=sleeps.append, backoff=0.5)
        assert b.complete(req("next?")) == "FINISH"
        assert b.attempts == 3 and sleeps == [0.5, 1.0]
        assert calls[0] == {"model": "m", "messages": [{"role": "user", "content": "next?"}],
                            "temperature": 0.0, "max_tokens": 256}

    def test_attempts_capped(self):
        b = RemoteBackend("http://x", "m", client=mock_client(lambda r: httpx.Response(503)),
                          max_retries=2, sleep=lambda s: None)
        with pytest.raises(RemoteError) as info:
            b.complete(req("p"))
        assert b.attempts == 3 and info.value.status == 503

    def test_no_retry_on_client_error(self):
        b = RemoteBackend("http://x", "m", client=mock_client(lambda r: httpx.Response(400, text="bad")),
                          sleep=lambda s: None)
        with pytest.raises(RemoteError):
            b.complete(req("p"))
        assert b.attempts == 1

    def test_retry_after_is_honoured(self):
        responses = iter([httpx.Response(429, headers={"Retry-After": "3"}), ok("x")])
        sleeps: list[float] = []
        b = RemoteBackend("http://x", "m", client=mock_client(lambda r: next(responses)), sleep=sleeps.append)
        assert b.complete(req("p")) == "x"
        assert sleeps == [3.0]

    def test_transport_error_retried(self):
        state = {"n": 0}

        def handler(request):
            state["n"] += 1
            if state["n"] == 1:
                raise httpx.ConnectError("refused")
            return ok("y")

        b = RemoteBackend("http://x", "m", client=mock_client(handler), sleep=lambda s: None)
        assert b.complete(req("p")) == "y"

    def test_malformed_response(self):
        b = RemoteBackend("http://x", "m", client=mock_client(lambda r: httpx.Response(200, json={"x": 1})))
        with pytest.raises(RemoteError):
            b.complete(req("p"))

    def test_auth_header(self):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return ok("z")

        RemoteBackend("http://x", "m", "tok", client=mock_client(handler)).complete(req("p"))
        assert seen["auth"] == "Bearer tok"

    def test_vision_body_has_image_part(self):
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            return ok("a can <box>1,2,3,4</box>")

        img = ImagePayload(b"\x89PNG", "image/png")
        b = RemoteBackend("http://x", "m", client=mock_client(handler), vision=True)
        assert b.complete_vision(req("find the can", img)).startswith("a can")
        content = bodies[0]["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "find the can"}
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_vision_requires_capability(self):
        b = RemoteBackend("http://x", "m", client=mock_client(lambda r: ok("")))
        with pytest.raises(NotVisionCapable):
            b.complete_vision(req("x", ImagePayload(b"i")))

    def test_from_env(self, monkeypatch):
        monkeypatch.delenv("COGOS_BACKEND_URL", raising=False)
        with pytest.raises(BackendError):
            RemoteBackend.from_env()
        monkeypatch.setenv("COGOS_BACKEND_URL", "http://x")
        monkeypatch.setenv("COGOS_BACKEND_MODEL", "mistral")
        assert RemoteBackend.from_env().model == "mistral"


class TestRecording:
    def test_record_then_replay(self, tmp_path):
        replies = iter(["GO_TO(kitchen)", "FINISH"])
        remote = RemoteBackend("http://x", "m", client=mock_client(lambda r: ok(next(replies))))
        path = tmp_path / "rec.jsonl"
        rec = RecordingBackend(remote, path)
        first = [rec.complete(req("a")), rec.complete(req("b"))]
        replay = load_script(path)
        assert [replay.complete(req("a")), replay.complete(req("b"))] == first
        assert rec.replay().complete(req("zzz")) == "GO_TO(kitchen)"
