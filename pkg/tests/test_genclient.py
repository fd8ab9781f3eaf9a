import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from narrative_salience.genclient import (
    PROMPT_KINDS, GenClientConfig, build_prompt, llm_generate_twins, prompt_template, split_sentences,
)

# Transcribed prompt fixtures; a change to any of them must be deliberate.
FIXTURE_SHA256 = {
    "verbose": "d765c9cdeeb0effecabffdf6d9e2cdbdd9717dfccd5e3be42a16018a35dc71a5",
    "retell": "160c95562074b1837aa41c4780f741a31ce76d29d2b784b536070b98f2831672",
    "negative": "beac327f36f97fbfb64a3d260c22282a8f6715436a810dfcab7af4d9f00a68fb",
    "wiki-negative": "841f0d33efa15569abba12446c73175c84c9d3a0b03ce28e61e9ba8d201c6e03",
}

FIVE = "Ann woke up. She made tea. The kettle broke! She laughed. Then she went out."


class Stub:
    """Chat endpoint on localhost. ``replies`` is consumed one per request;
    each entry is ``(status, body)`` or ``"drop"`` to close the connection."""

    def __init__(self):
        self.requests = []
        self.replies = []
        self.default = (200, FIVE)
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                raw = self.rfile.read(int(self.headers["Content-Length"]))
                stub.requests.append({"body": json.loads(raw), "headers": dict(self.headers)})
                reply = stub.replies.pop(0) if stub.replies else stub.default
                if reply == "drop":
                    self.close_connection = True
                    self.connection.shutdown(2)
                    return
                status, content = reply
                if status == 200 and not isinstance(content, bytes):
                    payload = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
                else:
                    payload = content if isinstance(content, bytes) else content.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub():
    s = Stub()
    yield s
    s.close()


def cfg(stub, **kw):
    base = dict(endpoint=stub.url, model="test-model", temperature=0.7, max_retries=2, timeout=5, backoff=0.0,
                concurrency=2)
    base.update(kw)
    return GenClientConfig(**base)


def records(n=1):
    return [{"id": f"r{i}", "anchor": ["One day Ann woke.", f"Story {i} ends."]} for i in range(n)]


def test_fixtures_are_pinned():
    for kind in PROMPT_KINDS:
        text = prompt_template(kind)
        assert hashlib.sha256(text.encode("utf-8")).hexdigest() == FIXTURE_SHA256[kind]
        assert text.startswith("{STORY}\n\n") and text.count("{STORY}") == 1


def test_retell_success_and_wire_format(stub, monkeypatch):
    monkeypatch.setenv("NARRATIVE_SALIENCE_API_KEY", "sekret")
    recs = records()
    out = llm_generate_twins(recs, cfg(stub), "retell")
    assert out[0]["twin"] == split_sentences(FIVE) and len(out[0]["twin"]) == 5
    assert "twin" not in recs[0]
    (req,) = stub.requests
    body = req["body"]
    assert body["model"] == "test-model" and body["temperature"] == 0.7
    assert body["messages"] == [{"role": "user", "content": build_prompt(recs[0]["anchor"], "retell")}]
    sent = body["messages"][0]["content"].encode("utf-8")
    template = prompt_template("retell").encode("utf-8")
    story = " ".join(recs[0]["anchor"]).encode("utf-8")
    assert sent == template.replace(b"{STORY}", story, 1)
    assert req["headers"]["Authorization"] == "Bearer sekret"


def test_wrong_sentence_count_marked_failed(stub):
    stub.default = (200, "One. Two. Three. Four.")
    recs = records(3)
    out = llm_generate_twins(recs, cfg(stub), "retell")
    for before, after in zip(recs, out):
        assert "twin" not in after
        (fail,) = after["gen_failures"]
        assert "expected 5 sentences, got 4" in fail["error"] and fail["raw"] == "One. Two. Three. Four."
        assert {k: after[k] for k in before} == before
    assert [r["id"] for r in out] == ["r0", "r1", "r2"]


def test_retries_then_failure(stub):
    stub.default = (503, "busy")
    out = llm_generate_twins(records(), cfg(stub, max_retries=2), "negative")
    assert len(stub.requests) == 3
    (fail,) = out[0]["gen_failures"]
    assert fail["attempts"] == 3 and "HTTP 503" in fail["error"]


def test_transient_errors_recover(stub):
    stub.replies = ["drop", (500, "oops")]
    out = llm_generate_twins(records(), cfg(stub, max_retries=2), "negative")
    assert len(stub.requests) == 3
    assert len(out[0]["distractor"]) == 5 and "gen_failures" not in out[0]


def test_malformed_body_keeps_raw_text(stub):
    stub.default = (200, b'{"choices": []}')
    out = llm_generate_twins(records(), cfg(stub), "verbose")
    (fail,) = out[0]["gen_failures"]
    assert fail["raw"] == '{"choices": []}' and "malformed" in fail["error"]
    assert len(stub.requests) == 1


def test_existing_field_untouched_and_order_preserved(stub):
    recs = records(5)
    recs[2]["twin"] = ["Kept as is."]
    out = llm_generate_twins(recs, cfg(stub, concurrency=4), "retell")
    assert [r["id"] for r in out] == [r["id"] for r in recs]
    assert out[2]["twin"] == ["Kept as is."]
    assert len(stub.requests) == 4


def test_retell_prefers_verbose_source(stub):
    rec = records()[0]
    rec["verbose"] = ["A long telling.", "With more detail."]
    llm_generate_twins([rec], cfg(stub), "retell")
    assert "A long telling. With more detail." in stub.requests[0]["body"]["messages"][0]["content"]


def test_wiki_negative_needs_five_sections(stub):
    rec = {"id": "w", "anchor": [f"Sentence {i}." for i in range(1, 11)]}
    prompt = build_prompt(rec["anchor"], "wiki-negative")
    assert prompt.startswith("Sentence 1. Sentence 2.\n\nSentence 3. Sentence 4.\n\n")
    stub.default = (200, "\n\n".join(f"Part {i} happens." for i in range(5)))
    assert len(llm_generate_twins([rec], cfg(stub), "wiki-negative")[0]["distractor"]) == 5
    stub.default = (200, "Only one section.")
    assert "sections" in llm_generate_twins([rec], cfg(stub), "wiki-negative")[0]["gen_failures"][0]["error"]


def test_config_and_argument_errors(stub):
    with pytest.raises(ValueError):
        GenClientConfig(endpoint="x", model="m", max_retries=-1)
    with pytest.raises(ValueError):
        llm_generate_twins([], cfg(stub), "retell")
    with pytest.raises(ValueError):
        llm_generate_twins(records(), cfg(stub), "summary")
