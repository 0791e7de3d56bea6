"""Parse HotpotQA-, PubMedQA- and DuReader_robust-style files into one
canonical QA record model, validate it, and round-trip it through JSONL.

Canonical record, one JSON object per line:
  {"record_id", "question", "language", "documents": [{"doc_id", "title",
   "text", "role"}], "gold_short": [...], "gold_long", "category"}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyDataset, IoFailure, SchemaViolation
from .util import json_line

log = logging.getLogger(__name__)

ROLES = ("oracle", "distractor", "unknown")
LANGUAGES = ("en", "zh")
SCHEMAS = ("hotpotqa", "pubmedqa", "dureader")
SPLITS = ("train", "dev", "test")
CATEGORIES = ("bridge", "comparison")

SCHEMA_LANGUAGE = {"hotpotqa": "en", "pubmedqa": "en", "dureader": "zh"}


@dataclass
class Document:
    doc_id: str
    title: str | None
    text: str
    role: str = "unknown"


@dataclass
class QARecord:
    record_id: str
    question: str
    language: str
    documents: list[Document]
    gold_short: list[str]
    gold_long: str | None = None
    category: str | None = None

    def oracle_documents(self) -> list[Document]:
        return [d for d in self.documents if d.role == "oracle"]

    def non_oracle_documents(self) -> list[Document]:
        return [d for d in self.documents if d.role != "oracle"]


@dataclass
class DatasetHandle:
    """Immutable after load; safe to share across threads."""

    schema: str | None
    records: list[QARecord]
    split: str = "train"
    skipped: list[dict] = field(default_factory=list, repr=False)


# ------------------------------------------------------------- per-schema parsing

def _need(item: dict, key: str, index) -> object:
    if key not in item or item[key] in (None, ""):
        raise SchemaViolation(f"missing required field '{key}'", index=index)
    return item[key]


def _parse_hotpotqa_item(item: dict, index) -> QARecord:
    if not isinstance(item, dict):
        raise SchemaViolation("item is not an object", index=index)
    question = str(_need(item, "question", index))
    answer = str(_need(item, "answer", index))
    context = _need(item, "context", index)
    record_id = str(item.get("_id") or item.get("id") or f"hotpotqa-{index:06d}")

    supporting = item.get("supporting_facts") or []
    if isinstance(supporting, dict):  # columnar variant: {"title": [...], "sent_id": [...]}
        sup_titles = {str(t) for t in supporting.get("title", [])}
    else:
        sup_titles = {str(fact[0]) for fact in supporting if fact}

    documents: list[Document] = []
    if isinstance(context, dict):  # columnar variant
        pairs = list(zip(context.get("title", []), context.get("sentences", [])))
    else:
        pairs = [(entry[0], entry[1]) for entry in context if len(entry) >= 2]
    for i, (title, sentences) in enumerate(pairs):
        text = " ".join(s.strip() for s in sentences if s and s.strip()).strip()
        if not text:
            raise SchemaViolation(f"paragraph '{title}' has empty text", index=index)
        role = "oracle" if str(title) in sup_titles else "distractor"
        documents.append(Document(doc_id=f"p{i}", title=str(title), text=text, role=role))
    if not documents:
        raise SchemaViolation("no context paragraphs", index=index)
    if sup_titles and not any(d.role == "oracle" for d in documents):
        raise SchemaViolation("supporting-fact titles match no context paragraph", index=index)

    category = item.get("type")
    if category is not None and category not in CATEGORIES:
        raise SchemaViolation(f"unknown question type '{category}'", index=index)

    return QARecord(
        record_id=record_id,
        question=question,
        language="en",
        documents=documents,
        gold_short=[answer],
        category=category,
    )


def _first_key(item: dict, *keys):
    for key in keys:
        if key in item and item[key] not in (None, ""):
            return item[key]
    return None


def _parse_pubmedqa_item(item: dict, index, record_id: str | None = None) -> QARecord:
    if not isinstance(item, dict):
        raise SchemaViolation("item is not an object", index=index)
    question = _first_key(item, "QUESTION", "question")
    if question is None:
        raise SchemaViolation("missing required field 'question'", index=index)
    decision = _first_key(item, "final_decision", "FINAL_DECISION", "answer")
    if decision is None:
        raise SchemaViolation("missing required field 'final_decision'", index=index)
    contexts = _first_key(item, "CONTEXTS", "contexts", "context")
    if isinstance(contexts, dict):  # nested variant: {"contexts": [...], ...}
        contexts = contexts.get("contexts")
    if isinstance(contexts, str):
        contexts = [contexts]
    if not contexts:
        raise SchemaViolation("missing required field 'contexts'", index=index)

    # one question, one oracle document: contexts joined by blank lines
    text = "\n\n".join(str(c).strip() for c in contexts if str(c).strip()).strip()
    if not text:
        raise SchemaViolation("contexts are empty", index=index)
    long_answer = _first_key(item, "LONG_ANSWER", "long_answer")

    rid = record_id or str(item.get("id") or f"pubmedqa-{index:06d}")
    return QARecord(
        record_id=rid,
        question=str(question),
        language="en",
        documents=[Document(doc_id="ctx", title=None, text=text, role="oracle")],
        gold_short=[str(decision)],
        gold_long=str(long_answer) if long_answer is not None else None,
    )


def _parse_dureader_item(item: dict, index) -> QARecord:
    if not isinstance(item, dict):
        raise SchemaViolation("item is not an object", index=index)
    question = _first_key(item, "question")
    document = _first_key(item, "document", "context")
    answer = _first_key(item, "answer")
    if answer is None:
        answers = item.get("answers")
        if isinstance(answers, list) and answers:
            first = answers[0]
            answer = first.get("text") if isinstance(first, dict) else first
    if question is None:
        raise SchemaViolation("missing required field 'question'", index=index)
    if document is None:
        raise SchemaViolation("missing required field 'document'", index=index)
    if answer in (None, ""):
        raise SchemaViolation("missing required field 'answer'", index=index)
    rid = str(item.get("id") or f"dureader-{index:06d}")
    return QARecord(
        record_id=rid,
        question=str(question),
        language="zh",
        documents=[Document(doc_id="ctx", title=None, text=str(document).strip(), role="oracle")],
        gold_short=[str(answer)],
    )


def _iter_dureader_items(payload) -> list[dict]:
    """Accept both the flat item list and the nested article/paragraph layout."""
    if isinstance(payload, dict) and "data" in payload:
        items = []
        for article in payload["data"]:
            for para in article.get("paragraphs", []):
                context = para.get("context", "")
                for qa in para.get("qas", []):
                    items.append(
                        {
                            "id": qa.get("id"),
                            "question": qa.get("question"),
                            "document": context,
                            "answers": qa.get("answers", []),
                        }
                    )
        return items
    if isinstance(payload, list):
        return payload
    raise IoFailure("unrecognized dureader file layout")


_PARSERS = {
    "hotpotqa": _parse_hotpotqa_item,
    "pubmedqa": _parse_pubmedqa_item,
    "dureader": _parse_dureader_item,
}


def _read_items(path: Path, schema: str) -> list:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    stripped = raw.lstrip()
    if not stripped:
        raise EmptyDataset(f"{path} is empty")
    if stripped[0] in "[{":
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            payload = None
        if payload is not None:
            if schema == "dureader":
                return _iter_dureader_items(payload)
            if isinstance(payload, list):
                return payload
            if isinstance(payload, dict):
                if schema == "pubmedqa":
                    # keyed-by-id layout: key becomes the record id
                    return [{"__key__": k, **v} for k, v in payload.items()]
                raise IoFailure(f"{path}: expected a JSON array for schema {schema}")
    # JSON-lines fallback; bad lines surface as item-level schema violations
    items = []
    for lineno, line in enumerate(raw.splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            items.append(json.loads(line))
        except json.JSONDecodeError as exc:
            items.append(SchemaViolation(f"invalid JSON: {exc}", index=lineno + 1))
    return items


def load_dataset(
    path,
    schema: str,
    split: str = "train",
    strict: bool = True,
) -> DatasetHandle:
    """Map every source item to one QARecord.

    Strict mode aborts on the first invalid item; lenient mode skips it and
    records the skip on the returned handle (never silently).
    """
    if schema not in SCHEMAS:
        raise SchemaViolation(f"unknown schema '{schema}'")
    if split not in SPLITS:
        raise SchemaViolation(f"unknown split '{split}'")
    path = Path(path)
    items = _read_items(path, schema)
    parser = _PARSERS[schema]

    records: list[QARecord] = []
    skipped: list[dict] = []
    seen_ids: set[str] = set()
    for index, item in enumerate(items):
        try:
            if isinstance(item, SchemaViolation):
                raise item
            if schema == "pubmedqa" and isinstance(item, dict) and "__key__" in item:
                record = _parse_pubmedqa_item(item, index, record_id=str(item["__key__"]))
            else:
                record = parser(item, index)
            if record.record_id in seen_ids:
                raise SchemaViolation(f"duplicate record id '{record.record_id}'", index=index)
        except SchemaViolation as exc:
            if strict:
                raise
            skipped.append({"index": index, "reason": str(exc)})
            log.warning("skipping item %s: %s", index, exc)
            continue
        seen_ids.add(record.record_id)
        records.append(record)

    if not records:
        raise EmptyDataset(f"{path} produced no records for schema {schema}")
    return DatasetHandle(schema=schema, records=records, split=split, skipped=skipped)


# ------------------------------------------------------------------- validation

@dataclass
class Violation:
    invariant: str
    record_id: str
    detail: str


@dataclass
class ValidationReport:
    n_records: int
    counts: dict[str, int]
    violations: list[Violation]

    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "n_records": self.n_records,
            "counts": self.counts,
            "violations": [
                {"invariant": v.invariant, "record_id": v.record_id, "detail": v.detail}
                for v in self.violations
            ],
        }


def validate_dataset(handle: DatasetHandle) -> ValidationReport:
    """Report-only invariant check; never mutates records."""
    violations: list[Violation] = []

    def add(invariant: str, record_id: str, detail: str) -> None:
        violations.append(Violation(invariant, record_id, detail))

    expected_language = SCHEMA_LANGUAGE.get(handle.schema or "")
    for record in handle.records:
        if not record.gold_short:
            add("gold_short_nonempty", record.record_id, "gold_short is empty")
        elif any(not str(g).strip() for g in record.gold_short):
            add("gold_short_nonempty", record.record_id, "gold_short has an empty entry")

        doc_ids = [d.doc_id for d in record.documents]
        if len(doc_ids) != len(set(doc_ids)):
            dupes = sorted({i for i in doc_ids if doc_ids.count(i) > 1})
            add("doc_id_unique", record.record_id, f"duplicate doc ids {dupes}")
        for doc in record.documents:
            if not doc.text.strip():
                add("document_text_nonempty", record.record_id, f"document {doc.doc_id} is blank")
            if doc.role not in ROLES:
                add("document_role_known", record.record_id, f"document {doc.doc_id} role '{doc.role}'")

        if record.documents and not any(d.role == "oracle" for d in record.documents):
            add("oracle_present", record.record_id, "no oracle document")

        if record.language not in LANGUAGES:
            add("language_consistent", record.record_id, f"unknown language '{record.language}'")
        elif expected_language and record.language != expected_language:
            add(
                "language_consistent",
                record.record_id,
                f"language '{record.language}' but schema {handle.schema} expects {expected_language}",
            )

        if record.category is not None:
            if record.category not in CATEGORIES:
                add("category_valid", record.record_id, f"unknown category '{record.category}'")
            elif handle.schema is not None and handle.schema != "hotpotqa":
                add("category_valid", record.record_id, "category set on a non-hotpotqa record")

    counts: dict[str, int] = {}
    for violation in violations:
        counts[violation.invariant] = counts.get(violation.invariant, 0) + 1
    return ValidationReport(n_records=len(handle.records), counts=counts, violations=violations)


# ---------------------------------------------------------------- canonical JSONL

def record_to_json(record: QARecord) -> dict:
    return {
        "record_id": record.record_id,
        "question": record.question,
        "language": record.language,
        "documents": [
            {"doc_id": d.doc_id, "title": d.title, "text": d.text, "role": d.role}
            for d in record.documents
        ],
        "gold_short": list(record.gold_short),
        "gold_long": record.gold_long,
        "category": record.category,
    }


def record_from_json(obj: dict, index=None) -> QARecord:
    for key in ("record_id", "question", "language", "documents", "gold_short"):
        if key not in obj:
            raise SchemaViolation(f"canonical record missing '{key}'", index=index)
    documents = [
        Document(
            doc_id=str(d["doc_id"]),
            title=d.get("title"),
            text=str(d["text"]),
            role=d.get("role", "unknown"),
        )
        for d in obj["documents"]
    ]
    return QARecord(
        record_id=str(obj["record_id"]),
        question=str(obj["question"]),
        language=str(obj["language"]),
        documents=documents,
        gold_short=[str(g) for g in obj["gold_short"]],
        gold_long=obj.get("gold_long"),
        category=obj.get("category"),
    )


def save_canonical(handle: DatasetHandle, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in handle.records:
            fh.write(json_line(record_to_json(record)))
            fh.write("\n")


def load_canonical(path, schema: str | None = None, split: str = "train") -> DatasetHandle:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc}", index=lineno) from exc
        records.append(record_from_json(obj, index=lineno))
    if not records:
        raise EmptyDataset(f"{path} holds no canonical records")
    return DatasetHandle(schema=schema, records=records, split=split)
