"""Build fine-tuning instances: oracle + k distractor documents in a
shuffled context order, paired with a chain-of-thought target (or plain
answer in the no-CoT ablation).

Two selection methods:
  multi_doc      - distractors drawn from the record's own non-oracle
                   documents (multi-document sources).
  cross_question - the record's single document is the oracle; distractors
                   drawn from other records' documents.

Every record gets its own RNG stream derived from (seed, record_id), so
build output is independent of iteration order and parallelism.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import DatasetHandle, Document, QARecord
from .cotgen import CoTResponse
from .errors import (
    EmptyTarget,
    InsufficientDistractorPool,
    MethodNotApplicable,
    MissingTarget,
    NoOracle,
    ValidationError,
)
from .util import DEFAULT_SEED, derive_seed, json_line, normalize_ws, read_jsonl

METHODS = ("multi_doc", "cross_question")

# separates the source record id from the original doc id in pool entries
POOL_ID_SEP = "#"


@dataclass
class ConstructionConfig:
    k: int = 4
    method: str = "multi_doc"
    seed: int = DEFAULT_SEED
    include_cot: bool = True
    shuffle_context: bool = True

    def validate(self) -> None:
        if self.k < 0:
            raise ValidationError(f"k must be non-negative, got {self.k}")
        if self.method not in METHODS:
            raise ValidationError(f"unknown method '{self.method}'")


@dataclass
class RaftExample:
    record_id: str
    question: str
    oracle_docs: list[Document]
    distractor_docs: list[Document]
    context_order: list[Document]
    target: CoTResponse | str
    seed_used: int
    method: str = "multi_doc"
    k: int = 4

    @property
    def target_text(self) -> str:
        return self.target.raw if isinstance(self.target, CoTResponse) else self.target


def _dedup_against_oracles(candidates: list[Document], oracles: list[Document]) -> list[Document]:
    oracle_ids = {d.doc_id for d in oracles}
    oracle_texts = {normalize_ws(d.text) for d in oracles}
    return [
        d for d in candidates
        if d.doc_id not in oracle_ids and normalize_ws(d.text) not in oracle_texts
    ]


def sample_distractors(
    candidates: list[Document],
    oracles: list[Document],
    k: int,
    rng: random.Random,
    record_id: str | None = None,
) -> list[Document]:
    """Uniform draw without replacement, never colliding with an oracle."""
    eligible = _dedup_against_oracles(candidates, oracles)
    if len(eligible) < k:
        raise InsufficientDistractorPool(available=len(eligible), needed=k, record_id=record_id)
    return rng.sample(eligible, k)


def select_documents_multi(
    record: QARecord, k: int, rng: random.Random
) -> tuple[list[Document], list[Document]]:
    """All oracle documents plus k distractors from the record's remaining docs."""
    oracles = record.oracle_documents()
    if not oracles:
        raise NoOracle(f"record {record.record_id} has no oracle document")
    remaining = [d for d in record.documents if d.role != "oracle"]
    distractors = sample_distractors(remaining, oracles, k, rng, record_id=record.record_id)
    return oracles, distractors


def select_documents_single(
    record: QARecord, pool: list[Document], k: int, rng: random.Random
) -> tuple[list[Document], list[Document]]:
    """The record's one document is the oracle; distractors come from the pool.

    The pool must exclude this record's own documents (see
    ``cross_question_pool``); duplicates of the oracle text are never drawn.
    """
    oracles = record.oracle_documents()
    if not oracles:
        raise NoOracle(f"record {record.record_id} has no oracle document")
    if len(oracles) > 1:
        raise MethodNotApplicable(
            f"record {record.record_id} has {len(oracles)} oracle documents; "
            "cross_question expects exactly one"
        )
    distractors = sample_distractors(pool, oracles, k, rng, record_id=record.record_id)
    return oracles, distractors


def cross_question_pool(
    handle: DatasetHandle, exclude_record_id: str | None = None
) -> list[Document]:
    """Every document of every (other) record, ids namespaced by source record
    so pool entries stay globally unique and carry provenance."""
    pool = []
    for record in sorted(handle.records, key=lambda r: r.record_id):
        if record.record_id == exclude_record_id:
            continue
        for doc in record.documents:
            pool.append(
                Document(
                    doc_id=f"{record.record_id}{POOL_ID_SEP}{doc.doc_id}",
                    title=doc.title,
                    text=doc.text,
                    role="distractor",
                )
            )
    return pool


def pool_source_id(doc_id: str) -> str | None:
    if POOL_ID_SEP in doc_id:
        return doc_id.split(POOL_ID_SEP, 1)[0]
    return None


def assemble_example(
    record: QARecord,
    oracles: list[Document],
    distractors: list[Document],
    target: CoTResponse | str,
    cfg: ConstructionConfig,
    rng: random.Random,
    seed_used: int | None = None,
) -> RaftExample:
    """Pair the selected documents with the target under a context ordering.

    shuffle_context=True draws a uniformly random permutation; otherwise the
    order is oracles first, then distractors.
    """
    target_text = target.raw if isinstance(target, CoTResponse) else str(target)
    if not target_text.strip():
        raise EmptyTarget(f"record {record.record_id} has an empty target")
    context = list(oracles) + list(distractors)
    if cfg.shuffle_context:
        rng.shuffle(context)
    return RaftExample(
        record_id=record.record_id,
        question=record.question,
        oracle_docs=list(oracles),
        distractor_docs=list(distractors),
        context_order=context,
        target=target,
        seed_used=seed_used if seed_used is not None else cfg.seed,
        method=cfg.method,
        k=cfg.k,
    )


@dataclass
class BuildReport:
    method: str
    k: int
    seed: int
    total: int = 0
    emitted: int = 0
    skipped: list[dict] = field(default_factory=list)
    # record_id -> source record id per distractor, for provenance checks
    provenance: dict[str, list[str]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "seed": self.seed,
            "total": self.total,
            "emitted": self.emitted,
            "skipped": self.skipped,
            "provenance": self.provenance,
        }


def build_raft_dataset(
    handle: DatasetHandle,
    cfg: ConstructionConfig,
    targets: dict[str, CoTResponse] | None = None,
    strict: bool = True,
) -> tuple[list[RaftExample], BuildReport]:
    """One example per eligible record, sorted by record_id.

    Selection errors and missing targets abort in strict mode and are
    skip-and-reported in lenient mode; the build never silently emits an
    example with fewer than k distractors.
    """
    cfg.validate()
    targets = targets or {}
    report = BuildReport(method=cfg.method, k=cfg.k, seed=cfg.seed, total=len(handle.records))
    examples: list[RaftExample] = []

    full_pool: list[tuple[str | None, Document]] = []
    if cfg.method == "cross_question":
        full_pool = [(pool_source_id(d.doc_id), d) for d in cross_question_pool(handle)]

    for record in sorted(handle.records, key=lambda r: r.record_id):
        record_seed = derive_seed(cfg.seed, record.record_id)
        rng = random.Random(record_seed)
        try:
            if cfg.method == "multi_doc":
                oracles, distractors = select_documents_multi(record, cfg.k, rng)
            else:
                pool = [d for src, d in full_pool if src != record.record_id]
                oracles, distractors = select_documents_single(record, pool, cfg.k, rng)
            if cfg.include_cot:
                if record.record_id not in targets:
                    raise MissingTarget(record.record_id)
                target: CoTResponse | str = targets[record.record_id]
            else:
                if not record.gold_short:
                    raise EmptyTarget(f"record {record.record_id} has no gold answer")
                target = record.gold_short[0]
            example = assemble_example(
                record, oracles, distractors, target, cfg, rng, seed_used=record_seed
            )
        except ValidationError as exc:
            if strict:
                raise
            report.skipped.append({"record_id": record.record_id, "reason": str(exc)})
            continue
        examples.append(example)
        report.provenance[record.record_id] = [
            pool_source_id(d.doc_id) or record.record_id for d in example.distractor_docs
        ]

    report.emitted = len(examples)
    return examples, report


# ------------------------------------------------------------------ serialization

def example_to_json(example: RaftExample) -> dict:
    return {
        "record_id": example.record_id,
        "question": example.question,
        "context": [
            {"doc_id": d.doc_id, "title": d.title, "text": d.text}
            for d in example.context_order
        ],
        "target": example.target_text,
        "meta": {
            "oracle_ids": [d.doc_id for d in example.oracle_docs],
            "seed": example.seed_used,
            "method": example.method,
            "k": example.k,
        },
    }


def serialize_examples(examples: list[RaftExample]) -> str:
    return "".join(json_line(example_to_json(e)) + "\n" for e in examples)


def save_examples(examples: list[RaftExample], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_examples(examples), encoding="utf-8")


def load_examples(path) -> list[dict]:
    """Read a serialized example file back as plain dicts (schema-checked)."""
    rows = []
    for lineno, obj in read_jsonl(path):
        for key in ("record_id", "question", "context", "target", "meta"):
            if key not in obj:
                raise ValidationError(f"line {lineno}: example missing '{key}'")
        rows.append(obj)
    return rows
