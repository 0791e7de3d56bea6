"""Chat-completion clients: a real HTTP client for any endpoint that speaks
the common chat-completions wire shape, and a deterministic mock for tests
and offline runs.

Request body: {"model", "messages": [{"role", "content"}], "temperature",
"max_tokens"}; the answer is read from choices[0].message.content.
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass

import requests

from .errors import AuthFailure, EndpointFailure, ValidationError
from .util import stable_hash64

log = logging.getLogger(__name__)

API_KEY_ENV = "RAFT_FORGE_API_KEY"

MOCK_SCHEME = "mock:"


@dataclass
class EndpointConfig:
    base_url: str
    model_name: str
    api_key: str | None = None  # falls back to the environment
    temperature: float = 0.0
    max_output_tokens: int = 1024
    request_timeout: float = 60.0
    max_retries: int = 3
    concurrency_limit: int = 4

    def validate(self) -> None:
        if self.concurrency_limit < 1:
            raise ValidationError("concurrency_limit must be >= 1")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")

    def resolve_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)

    def describe(self) -> dict:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }


class HttpChatClient:
    """POSTs one chat request per call, retrying transient failures with
    exponential backoff. Auth failures never retry."""

    TRANSIENT_STATUS = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(self, cfg: EndpointConfig, session=None, sleeper=time.sleep, backoff_base=1.0):
        cfg.validate()
        self.cfg = cfg
        self.session = session or requests.Session()
        self.sleeper = sleeper
        self.backoff_base = backoff_base

    def complete(self, messages: list[dict]) -> str:
        payload = {
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        api_key = self.cfg.resolve_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self.sleeper(self.backoff_base * 2 ** (attempt - 1))
            try:
                response = self.session.post(
                    self.cfg.base_url,
                    json=payload,
                    headers=headers,
                    timeout=self.cfg.request_timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                log.warning("request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials (HTTP {response.status_code})")
            if response.status_code in self.TRANSIENT_STATUS:
                last_error = EndpointFailure(f"HTTP {response.status_code}")
                log.warning("transient HTTP %s (attempt %d)", response.status_code, attempt + 1)
                continue
            if response.status_code != 200:
                raise EndpointFailure(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                body = response.json()
                content = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise EndpointFailure(f"malformed endpoint response body: {exc}") from exc
            if not isinstance(content, str):
                raise EndpointFailure("endpoint returned non-string content")
            return content
        raise EndpointFailure(
            f"endpoint unreachable after {self.cfg.max_retries + 1} attempts: {last_error}"
        )


_DOC_BLOCK = re.compile(r"\[Document 1\][^\n]*\n(.*?)(?:\n\n\[Document|\n\n(?:Question:|问题：))", re.S)
_QUESTION_LINE = re.compile(r"(?:Question:|问题：)\s*(.+)")


class MockChatClient:
    """Deterministic stand-in for a chat endpoint.

    kind:
      "cot"           - fabricate a reasoning trace quoting the first
                        document in the prompt, ending with the answer line.
      "echo=<text>"   - always return <text>.
      "no_delimiter"  - return prose with no answer line.
    ``script`` overrides kind with a fixed sequence of replies.
    Thread-safe; every exchange is kept on ``transcript``.
    """

    def __init__(self, kind: str = "cot", answer: str | None = None, script: list[str] | None = None):
        self.kind = kind
        self.answer = answer
        self.script = list(script) if script is not None else None
        self.calls = 0
        self.transcript: list[dict] = []
        self._lock = threading.Lock()

    def describe(self) -> dict:
        return {"mock": self.kind if self.script is None else "scripted"}

    def complete(self, messages: list[dict]) -> str:
        with self._lock:
            self.calls += 1
            if self.script is not None:
                if not self.script:
                    raise EndpointFailure("mock script exhausted")
                reply = self.script.pop(0)
            else:
                reply = self._reply(messages)
            self.transcript.append({"messages": messages, "reply": reply})
            return reply

    def _reply(self, messages: list[dict]) -> str:
        if self.kind.startswith("echo="):
            return self.kind[len("echo="):]
        if self.kind == "no_delimiter":
            return "I could not settle on a final answer format here."

        text = "\n".join(m.get("content", "") for m in messages)
        zh = "##答案：" in text or "問題" in text or "问题：" in text
        match = _QUESTION_LINE.search(text)
        question = match.group(1).strip() if match else ""
        answer = self.answer or f"mock-{stable_hash64(question) % 100000}"

        doc_match = _DOC_BLOCK.search(text)
        if doc_match:
            doc_text = " ".join(doc_match.group(1).split())
            span = doc_text[:12] if zh else " ".join(doc_text.split(" ")[:5])
        else:
            span = ""
        if zh:
            quoted = f"文档指出「{span}」。" if span else "文档未提供可引用内容。"
            return f"{quoted}据此可以得出结论。\n##答案：{answer}"
        quoted = f'The documents state "{span}".' if span else "The documents offer no quotable span."
        return f"{quoted} That settles the question.\n##Answer: {answer}"


def make_client(cfg: EndpointConfig, session=None):
    """mock:<spec> base URLs build a MockChatClient; anything else goes HTTP."""
    if cfg.base_url.startswith(MOCK_SCHEME):
        spec = cfg.base_url[len(MOCK_SCHEME):] or "cot"
        return MockChatClient(kind=spec)
    return HttpChatClient(cfg, session=session)
