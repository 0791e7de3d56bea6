"""Bilingual answer normalization and EM/F1 scoring with aggregation.

Normalization: lowercase, strip punctuation (frozen table in
data/punctuation_v1.txt), drop English articles, standardize whitespace.
English scores over space-separated tokens, Chinese over single characters.
All scoring functions are pure; aggregation rounds half-up to two decimals
only at the report boundary.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from .corpus import CATEGORIES, DatasetHandle
from .errors import EmptyGold, EmptyInput, MissingLongGold, UnknownRecordId
from .util import read_jsonl, round_half_up

ARTICLES = frozenset({"a", "an", "the"})


def _load_punct_table() -> frozenset[str]:
    text = (resources.files("raft_forge") / "data" / "punctuation_v1.txt").read_text("utf-8")
    chars = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        chars.add(chr(int(line[2:], 16)))
    return frozenset(chars)


PUNCTUATION = _load_punct_table()
_STRIP_TABLE = {ord(c): None for c in PUNCTUATION}


@dataclass
class NormalizedTokens:
    tokens: list[str]
    language: str

    def joined(self) -> str:
        sep = " " if self.language == "en" else ""
        return sep.join(self.tokens)


def strip_punctuation(text: str) -> str:
    return text.translate(_STRIP_TABLE)


def normalize_answer(text: str, language: str) -> NormalizedTokens:
    """Apply the four standardization steps and tokenize per language."""
    lowered = strip_punctuation(text.lower())
    if language == "zh":
        # character-level, no article removal; whitespace dropped entirely
        tokens = [ch for ch in lowered if not ch.isspace()]
    else:
        tokens = [tok for tok in lowered.split() if tok not in ARTICLES]
    return NormalizedTokens(tokens=tokens, language=language)


def _tokens(text: str, language: str) -> list[str]:
    return normalize_answer(text, language).tokens


def exact_match(pred: str, gold_list: list[str], language: str) -> int:
    """1 iff the normalized prediction equals any normalized gold."""
    if not gold_list:
        raise EmptyGold("exact_match needs at least one gold answer")
    pred_tokens = _tokens(pred, language)
    return int(any(pred_tokens == _tokens(gold, language) for gold in gold_list))


def _pair_f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(pred: str, gold_list: list[str], language: str) -> float:
    """Token-multiset F1, max over gold alternatives."""
    if not gold_list:
        raise EmptyGold("f1 needs at least one gold answer")
    pred_tokens = _tokens(pred, language)
    return max(_pair_f1(pred_tokens, _tokens(gold, language)) for gold in gold_list)


@dataclass
class ScoreRow:
    record_id: str
    em: int
    f1: float


@dataclass
class MetricReport:
    rows: list[ScoreRow]
    aggregates: dict[str, float]            # {"em": ..., "f1": ...}, x100, 2dp
    by_category: dict[str, dict[str, float]] = field(default_factory=dict)
    missing: list[str] = field(default_factory=list)

    @property
    def missing_ratio(self) -> float:
        total = len(self.rows) + sum(1 for m in self.missing if m not in {r.record_id for r in self.rows})
        return len(self.missing) / total if total else 0.0

    def to_json(self) -> dict:
        return {
            "rows": [{"record_id": r.record_id, "em": r.em, "f1": r.f1} for r in self.rows],
            "aggregates": self.aggregates,
            "by_category": self.by_category,
            "missing": list(self.missing),
        }

    def render_text(self) -> str:
        lines = []
        header = f"{'group':<14}{'n':>8}{'EM':>10}{'F1':>10}"
        lines.append(header)
        lines.append("-" * len(header))
        lines.append(
            f"{'overall':<14}{len(self.rows):>8}"
            f"{self.aggregates['em']:>10.2f}{self.aggregates['f1']:>10.2f}"
        )
        for cat in sorted(self.by_category):
            agg = self.by_category[cat]
            lines.append(f"{cat:<14}{agg['n']:>8}{agg['em']:>10.2f}{agg['f1']:>10.2f}")
        if self.missing:
            lines.append(f"missing predictions: {len(self.missing)}")
        return "\n".join(lines)


def _mean_x100(values) -> float:
    values = list(values)
    return round_half_up(100.0 * sum(values) / len(values))


def aggregate(rows: list[ScoreRow], categories: dict[str, str] | None = None) -> MetricReport:
    """Overall and per-category means x100, rounded half-up to two decimals."""
    if not rows:
        raise EmptyInput("no scored rows to aggregate")
    aggregates = {
        "em": _mean_x100(r.em for r in rows),
        "f1": _mean_x100(r.f1 for r in rows),
    }
    by_category: dict[str, dict[str, float]] = {}
    if categories:
        grouped: dict[str, list[ScoreRow]] = {}
        for row in rows:
            cat = categories.get(row.record_id)
            if cat is not None:
                grouped.setdefault(cat, []).append(row)
        for cat, cat_rows in grouped.items():
            by_category[cat] = {
                "n": len(cat_rows),
                "em": _mean_x100(r.em for r in cat_rows),
                "f1": _mean_x100(r.f1 for r in cat_rows),
            }
    return MetricReport(rows=rows, aggregates=aggregates, by_category=by_category)


def read_predictions(path: str | os.PathLike) -> list[dict]:
    """Prediction JSONL: one {"record_id", "answer"} object per line."""
    preds = []
    for lineno, obj in read_jsonl(path):
        if "record_id" not in obj or "answer" not in obj:
            raise UnknownRecordId(f"<line {lineno}: missing record_id/answer>")
        preds.append(obj)
    return preds


def score_predictions(
    predictions,
    gold: DatasetHandle,
    answer_field: str = "short",
    strict: bool = True,
    with_categories: bool = False,
) -> MetricReport:
    """Join predictions to gold records by record_id and score each pair.

    ``predictions`` is a prediction-file path or an iterable of
    {"record_id", "answer"} mappings. In strict mode every gold record
    missing a prediction scores 0 and is flagged in the report.
    """
    if isinstance(predictions, (str, os.PathLike)):
        predictions = read_predictions(predictions)
    if answer_field not in ("short", "long"):
        raise EmptyInput(f"unknown answer_field {answer_field!r}")

    by_id = {r.record_id: r for r in gold.records}
    answered: dict[str, str] = {}
    for pred in predictions:
        rid = str(pred["record_id"])
        if rid not in by_id:
            raise UnknownRecordId(rid)
        answered[rid] = str(pred["answer"])

    rows: list[ScoreRow] = []
    missing: list[str] = []
    categories: dict[str, str] = {}
    for record in gold.records:
        if answer_field == "long":
            if not record.gold_long:
                raise MissingLongGold(record.record_id)
            gold_list = [record.gold_long]
        else:
            gold_list = record.gold_short
        if record.category in CATEGORIES:
            categories[record.record_id] = record.category
        if record.record_id in answered:
            answer = answered[record.record_id]
            rows.append(
                ScoreRow(
                    record_id=record.record_id,
                    em=exact_match(answer, gold_list, record.language),
                    f1=f1(answer, gold_list, record.language),
                )
            )
        else:
            missing.append(record.record_id)
            if strict:
                rows.append(ScoreRow(record_id=record.record_id, em=0, f1=0.0))

    report = aggregate(rows, categories if with_categories else None)
    report.missing = missing
    return report
