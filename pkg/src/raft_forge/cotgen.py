"""Chain-of-thought target generation.

Prompts ask the model to reason over the oracle documents only, quote the
evidence it relies on, and finish with a single final-answer line. The line
prefix is ``##Answer:`` for English and ``##答案：`` for Chinese; the
extractor accepts either. Responses are cached content-addressed so reruns
never repeat a network call.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .clients import EndpointConfig, make_client
from .corpus import Document, QARecord
from .errors import (
    EmptyAnswer,
    MalformedResponse,
    MissingAnswerDelimiter,
    NoOracle,
    ValidationError,
)
from .util import atomic_write_text, canonical_json, json_line, normalize_ws, sha256_text

log = logging.getLogger(__name__)

EN_DELIMITER = "##Answer:"
ZH_DELIMITER = "##答案："
DELIMITERS = (EN_DELIMITER, ZH_DELIMITER)

# evidence quotes: ASCII double quotes or CJK corner brackets
_QUOTE_RE = re.compile(r'"([^"]+)"|「([^」]+)」')


def load_template(template_id: str) -> str:
    path = resources.files("raft_forge") / "templates" / f"{template_id}.txt"
    try:
        return path.read_text("utf-8")
    except FileNotFoundError as exc:
        raise ValidationError(f"unknown prompt template '{template_id}'") from exc


def render_documents(docs: list[Document]) -> str:
    blocks = []
    for i, doc in enumerate(docs, start=1):
        header = f"[Document {i}]" + (f" {doc.title}" if doc.title else "")
        blocks.append(f"{header}\n{doc.text}")
    return "\n\n".join(blocks)


def build_cot_prompt(question: str, oracles: list[Document], language: str) -> list[dict]:
    """System+user message pair: reasoning/quoting/delimiter instructions,
    the oracle texts, and the question. Distractors never enter here."""
    if not oracles:
        raise NoOracle("cannot build a generation prompt without oracle documents")
    lang = "zh" if language == "zh" else "en"
    system = load_template(f"cot_{lang}_v1.system").strip()
    user = load_template(f"cot_{lang}_v1.user").strip()
    user = user.replace("{documents}", render_documents(oracles)).replace("{question}", question)
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]


def _find_last_delimiter(raw: str) -> tuple[int, str] | None:
    best: tuple[int, str] | None = None
    for delim in DELIMITERS:
        pos = raw.rfind(delim)
        if pos >= 0 and (best is None or pos > best[0]):
            best = (pos, delim)
    return best


def extract_final_answer(raw: str) -> str:
    """Text after the last answer delimiter, trimmed."""
    found = _find_last_delimiter(raw)
    if found is None:
        raise MissingAnswerDelimiter("no answer delimiter in response")
    pos, delim = found
    answer = raw[pos + len(delim):].strip()
    if not answer:
        raise EmptyAnswer("answer delimiter present but no answer text follows")
    return answer


def parse_citations(text: str) -> list[str]:
    return [m.group(1) or m.group(2) for m in _QUOTE_RE.finditer(text)]


@dataclass
class CoTResponse:
    reasoning: str
    citations: list[str]
    final_answer: str
    raw: str

    @classmethod
    def from_raw(cls, raw: str) -> "CoTResponse":
        """Parse and validate a model reply: exactly one terminal answer
        delimiter, non-empty final answer."""
        occurrences = sum(raw.count(d) for d in DELIMITERS)
        if occurrences == 0:
            raise MissingAnswerDelimiter("no answer delimiter in response")
        if occurrences > 1:
            raise MalformedResponse(f"{occurrences} answer delimiters in one response")
        final_answer = extract_final_answer(raw)
        pos, _ = _find_last_delimiter(raw)
        reasoning = raw[:pos].strip()
        return cls(
            reasoning=reasoning,
            citations=parse_citations(reasoning),
            final_answer=final_answer,
            raw=raw,
        )

    def to_json(self) -> dict:
        return {
            "reasoning": self.reasoning,
            "citations": list(self.citations),
            "final_answer": self.final_answer,
            "raw": self.raw,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CoTResponse":
        return cls(
            reasoning=obj["reasoning"],
            citations=list(obj["citations"]),
            final_answer=obj["final_answer"],
            raw=obj["raw"],
        )


@dataclass
class CitationReport:
    results: list[tuple[str, bool]]

    @property
    def pass_ratio(self) -> float:
        if not self.results:
            return 1.0
        return sum(ok for _, ok in self.results) / len(self.results)

    def to_json(self) -> dict:
        return {
            "results": [{"quote": q, "pass": ok} for q, ok in self.results],
            "pass_ratio": self.pass_ratio,
        }


def verify_citations(resp: CoTResponse, oracles: list[Document]) -> CitationReport:
    """A quote passes iff its whitespace-normalized form occurs in some
    oracle's whitespace-normalized text."""
    normalized_oracles = [normalize_ws(d.text) for d in oracles]
    results = []
    for quote in resp.citations:
        needle = normalize_ws(quote)
        ok = bool(needle) and any(needle in hay for hay in normalized_oracles)
        results.append((quote, ok))
    return CitationReport(results=results)


class ResponseCache:
    """Content-addressed store: one JSON file per key under the cache
    directory, committed atomically."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(messages: list[dict], model_name: str, temperature: float) -> str:
        return sha256_text(
            canonical_json({"messages": messages, "model": model_name, "temperature": temperature})
        )

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> CoTResponse | None:
        path = self._path(key)
        if not path.exists():
            return None
        import json

        return CoTResponse.from_json(json.loads(path.read_text(encoding="utf-8")))

    def put(self, key: str, resp: CoTResponse) -> None:
        atomic_write_text(self._path(key), canonical_json(resp.to_json()))

    def __contains__(self, key: str) -> bool:
        return self._path(key).exists()


def _retry_messages(prompt: list[dict], raw: str, language: str) -> list[dict]:
    lang = "zh" if language == "zh" else "en"
    reminder = load_template(f"cot_{lang}_v1.retry").strip()
    return prompt + [
        {"role": "assistant", "content": raw},
        {"role": "user", "content": reminder},
    ]


def generate_cot(
    record: QARecord,
    cfg: EndpointConfig,
    cache: ResponseCache,
    client=None,
) -> CoTResponse:
    """Cache-first generation of one chain-of-thought target.

    Cache key = hash(prompt, model_name, temperature). On a malformed reply
    the endpoint gets one corrective re-prompt before MalformedResponse.
    """
    prompt = build_cot_prompt(record.question, record.oracle_documents(), record.language)
    key = cache.key(prompt, cfg.model_name, cfg.temperature)
    cached = cache.get(key)
    if cached is not None:
        return cached

    if client is None:
        client = make_client(cfg)
    raw = client.complete(prompt)
    try:
        resp = CoTResponse.from_raw(raw)
    except (MissingAnswerDelimiter, EmptyAnswer, MalformedResponse) as first_error:
        log.warning("record %s: %s; re-prompting once", record.record_id, first_error)
        raw = client.complete(_retry_messages(prompt, raw, record.language))
        try:
            resp = CoTResponse.from_raw(raw)
        except (MissingAnswerDelimiter, EmptyAnswer, MalformedResponse) as exc:
            raise MalformedResponse(
                f"record {record.record_id}: no valid answer line after re-prompt ({exc})"
            ) from exc
    cache.put(key, resp)
    return resp


@dataclass
class GenerationStats:
    total: int = 0
    cache_hits: int = 0
    generated: int = 0
    failures: list[dict] = field(default_factory=list)

    @property
    def hit_rate(self) -> float:
        return self.cache_hits / self.total if self.total else 0.0


def generate_targets(
    records: list[QARecord],
    cfg: EndpointConfig,
    cache: ResponseCache,
    client=None,
    strict: bool = True,
) -> tuple[dict[str, CoTResponse], GenerationStats]:
    """Generate targets for many records with bounded concurrency.

    Results come back keyed by record_id regardless of completion order.
    In strict mode the first failure propagates (already-generated responses
    stay committed to the cache).
    """
    cfg.validate()
    if client is None:
        client = make_client(cfg)
    stats = GenerationStats(total=len(records))

    # count cache hits up front so the stats reflect real network traffic
    hits: dict[str, CoTResponse] = {}
    pending: list[QARecord] = []
    for record in records:
        prompt = build_cot_prompt(record.question, record.oracle_documents(), record.language)
        key = cache.key(prompt, cfg.model_name, cfg.temperature)
        cached = cache.get(key)
        if cached is not None:
            hits[record.record_id] = cached
        else:
            pending.append(record)
    stats.cache_hits = len(hits)

    results: dict[str, CoTResponse] = dict(hits)
    errors: list[tuple[str, Exception]] = []
    if pending:
        with ThreadPoolExecutor(max_workers=cfg.concurrency_limit) as pool:
            futures = {
                pool.submit(generate_cot, record, cfg, cache, client): record
                for record in pending
            }
            for future, record in futures.items():
                try:
                    results[record.record_id] = future.result()
                    stats.generated += 1
                except Exception as exc:  # noqa: BLE001 - propagated below
                    errors.append((record.record_id, exc))
    if errors:
        if strict:
            raise errors[0][1]
        for record_id, exc in errors:
            stats.failures.append({"record_id": record_id, "reason": str(exc)})
            log.warning("record %s failed: %s", record_id, exc)
    return results, stats


def save_targets(results: dict[str, CoTResponse], records: list[QARecord], path) -> None:
    """Write targets in input record order, one JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            if record.record_id not in results:
                continue
            obj = {"record_id": record.record_id, **results[record.record_id].to_json()}
            fh.write(json_line(obj))
            fh.write("\n")


def load_targets(path) -> dict[str, CoTResponse]:
    from .util import read_jsonl

    targets = {}
    for _, obj in read_jsonl(path):
        record_id = obj.pop("record_id")
        targets[record_id] = CoTResponse.from_json(obj)
    return targets
