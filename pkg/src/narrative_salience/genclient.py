"""Twin/distractor generation through a chat-completions HTTP endpoint.

Request body: ``{"model", "messages": [{"role": "user", "content"}], "temperature"}``.
Response body: ``{"choices": [{"message": {"content": str}}]}``. The API key,
if any, is read from the environment variable named in the config
(``NARRATIVE_SALIENCE_API_KEY`` by default) and sent as a bearer token.
"""

from __future__ import annotations

import copy
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import requests

from .alignment import make_windows

log = logging.getLogger(__name__)

PROMPT_KINDS = ("verbose", "retell", "negative", "wiki-negative")
TARGET_FIELD = {"verbose": "verbose", "retell": "twin", "negative": "distractor", "wiki-negative": "distractor"}
_EXACT_SENTENCES = {"retell": 5, "negative": 5}
_EXACT_SECTIONS = {"wiki-negative": 5}
_SENT_SPLIT = re.compile(r"(?<=[.!?])[\"')\]]*\s+")


@dataclass(frozen=True)
class GenClientConfig:
    endpoint: str
    model: str
    temperature: float = 1.0
    max_retries: int = 3
    timeout: float = 120.0
    backoff: float = 1.0
    concurrency: int = 4
    api_key_env: str = "NARRATIVE_SALIENCE_API_KEY"

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be ≥ 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be ≥ 1")


def prompt_template(kind: str) -> str:
    if kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind {kind!r}; expected one of {PROMPT_KINDS}")
    name = kind.replace("-", "_") + ".txt"
    return resources.files(__package__).joinpath("prompts", name).read_text(encoding="utf-8")


def render_story(sentences, kind: str) -> str:
    if kind == "wiki-negative":
        n = len(sentences)
        parts = make_windows(n, 5) if n >= 5 else tuple((i, i) for i in range(1, n + 1))
        return "\n\n".join(" ".join(sentences[s - 1 : e]) for s, e in parts)
    return " ".join(sentences)


def build_prompt(sentences, kind: str) -> str:
    return prompt_template(kind).replace("{STORY}", render_story(sentences, kind), 1)


def split_sentences(text: str) -> list[str]:
    out = []
    for block in re.split(r"\n\s*\n|\n", text.strip()):
        out.extend(s.strip() for s in _SENT_SPLIT.split(block.strip()) if s.strip())
    return out


class GenerationError(RuntimeError):
    def __init__(self, message: str, raw: str | None = None, attempts: int = 0):
        super().__init__(message)
        self.raw = raw
        self.attempts = attempts


class ChatClient:
    def __init__(self, cfg: GenClientConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str) -> str:
        """POST one user message; retries transport errors and non-200 replies
        with exponential backoff, then raises :class:`GenerationError`."""
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        }
        last = "no attempt made"
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(self.cfg.endpoint, json=payload, headers=self._headers(),
                                         timeout=self.cfg.timeout)
            except requests.RequestException as e:
                last = f"{type(e).__name__}: {e}"
                log.warning("attempt %d failed: %s", attempt + 1, last)
                continue
            if resp.status_code != 200:
                last = f"HTTP {resp.status_code}"
                log.warning("attempt %d failed: %s", attempt + 1, last)
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise GenerationError("malformed response body", raw=resp.text, attempts=attempt + 1) from None
        raise GenerationError(f"endpoint failed after {self.cfg.max_retries + 1} attempts ({last})",
                              attempts=self.cfg.max_retries + 1)


def _source_sentences(record: dict, kind: str):
    if kind == "retell" and record.get("verbose"):
        return record["verbose"]
    return record["anchor"]


def _validate(text: str, kind: str) -> list[str]:
    if kind in _EXACT_SECTIONS:
        sections = [b for b in re.split(r"\n\s*\n", text.strip()) if b.strip()]
        if len(sections) != _EXACT_SECTIONS[kind]:
            raise GenerationError(f"expected {_EXACT_SECTIONS[kind]} sections, got {len(sections)}", raw=text)
    sents = split_sentences(text)
    if not sents:
        raise GenerationError("empty response", raw=text)
    want = _EXACT_SENTENCES.get(kind)
    if want is not None and len(sents) != want:
        raise GenerationError(f"expected {want} sentences, got {len(sents)}", raw=text)
    return sents


def llm_generate_twins(records: list[dict], cfg: GenClientConfig, prompt_kind: str,
                       session: requests.Session | None = None) -> list[dict]:
    """Return copies of ``records`` with the generated field added.

    ``verbose`` -> ``verbose``; ``retell`` -> ``twin`` (from ``verbose`` when
    present); ``negative``/``wiki-negative`` -> ``distractor``. Records whose
    target field is already filled are left alone. Failures are appended to
    ``gen_failures`` with the raw text, never raised.
    """
    if prompt_kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind {prompt_kind!r}")
    if not records:
        raise ValueError("empty corpus")
    client = ChatClient(cfg, session)
    target = TARGET_FIELD[prompt_kind]

    def work(rec: dict) -> dict:
        out = copy.deepcopy(rec)
        if out.get(target):
            return out
        prompt = build_prompt(_source_sentences(out, prompt_kind), prompt_kind)
        try:
            text = client.complete(prompt)
            out[target] = _validate(text, prompt_kind)
        except GenerationError as e:
            out.setdefault("gen_failures", []).append(
                {"kind": prompt_kind, "error": str(e), "raw": e.raw, "attempts": e.attempts}
            )
        return out

    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        return list(pool.map(work, records))
