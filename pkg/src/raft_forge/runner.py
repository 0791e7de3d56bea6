"""Experiment grid execution and score reporting.

Modes: zero-shot prompting (instructions + question only) and
retrieval-augmented prompting with either the oracle documents alone or
oracle + k random distractors. Predictions resume from an append-only
completed-id ledger, and score tables carry exact two-decimal gain
arithmetic between configured cell pairs.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .clients import EndpointConfig, make_client
from .construct import cross_question_pool, sample_distractors, select_documents_multi
from .corpus import DatasetHandle, QARecord
from .cotgen import extract_final_answer, load_template, render_documents
from .errors import (
    EmptyAnswer,
    InsufficientDistractorPool,
    MissingAnswerDelimiter,
    MissingCell,
    ValidationError,
)
from .evalkit import MetricReport
from .util import DEFAULT_SEED, canonical_json, derive_seed, json_line, sha256_text

log = logging.getLogger(__name__)

MODES = ("zero_shot", "rag")
DOCSET_POLICIES = ("none", "oracle_only", "with_distractors")
EXTRACTIONS = ("delimiter", "full_text")


@dataclass
class ExperimentConfig:
    mode: str
    endpoint: EndpointConfig
    docset_policy: str = "none"
    prompt_template_id: str | None = None
    language: str = "en"
    answer_extraction: str = "delimiter"
    seed: int = DEFAULT_SEED
    k: int = 4

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode '{self.mode}'")
        if self.docset_policy not in DOCSET_POLICIES:
            raise ValidationError(f"unknown docset_policy '{self.docset_policy}'")
        if self.mode == "zero_shot" and self.docset_policy != "none":
            raise ValidationError("zero_shot requires docset_policy=none")
        if self.mode == "rag" and self.docset_policy == "none":
            raise ValidationError("rag requires a document policy")
        if self.answer_extraction not in EXTRACTIONS:
            raise ValidationError(f"unknown answer_extraction '{self.answer_extraction}'")
        self.endpoint.validate()

    def template_id(self) -> str:
        if self.prompt_template_id:
            return self.prompt_template_id
        kind = "zero_shot" if self.mode == "zero_shot" else "rag"
        lang = "zh" if self.language == "zh" else "en"
        return f"infer_{kind}_{lang}_v1"

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "docset_policy": self.docset_policy,
            "endpoint": self.endpoint.describe(),
            "prompt_template_id": self.template_id(),
            "language": self.language,
            "answer_extraction": self.answer_extraction,
            "seed": self.seed,
            "k": self.k,
        }

    def config_hash(self) -> str:
        return sha256_text(canonical_json(self.to_json()))


def _policy_documents(record: QARecord, cfg: ExperimentConfig, rng: random.Random, pool):
    if cfg.docset_policy == "oracle_only":
        return list(record.oracle_documents())
    # with_distractors: prefer the record's own non-oracle documents,
    # fall back to a cross-question pool for single-document records
    try:
        oracles, distractors = select_documents_multi(record, cfg.k, rng)
    except InsufficientDistractorPool:
        if pool is None:
            raise
        oracles = record.oracle_documents()
        candidates = [d for d in pool if not d.doc_id.startswith(record.record_id + "#")]
        distractors = sample_distractors(candidates, oracles, cfg.k, rng, record_id=record.record_id)
    return oracles + distractors


def build_inference_prompt(
    record: QARecord,
    cfg: ExperimentConfig,
    rng: random.Random,
    pool: list | None = None,
) -> list[dict]:
    """Render the experiment prompt for one record.

    Zero-shot prompts carry no document text at all; RAG prompts carry the
    policy's document set in shuffled order.
    """
    template_id = cfg.template_id()
    system = load_template(f"{template_id}.system").strip()
    user = load_template(f"{template_id}.user").strip()
    if cfg.mode == "zero_shot":
        user = user.replace("{question}", record.question)
    else:
        docs = _policy_documents(record, cfg, rng, pool)
        docs = list(docs)
        rng.shuffle(docs)
        user = user.replace("{documents}", render_documents(docs)).replace(
            "{question}", record.question
        )
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]


def _read_ledger(path: Path) -> dict[str, dict]:
    """Tolerates a truncated trailing line from an interrupted run."""
    completed: dict[str, dict] = {}
    if not path.exists():
        return completed
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            continue
        completed[obj["record_id"]] = obj
    return completed


@dataclass
class RunResult:
    predictions_path: Path
    manifest_path: Path
    ledger_path: Path
    n_records: int
    n_queried: int
    fallback_count: int


def run_experiment(
    cfg: ExperimentConfig,
    dataset: DatasetHandle,
    client=None,
    out_dir="run",
) -> RunResult:
    """One prediction per record, written in dataset order.

    Completed records live in an append-only ledger; reruns skip them. The
    manifest captures the config hash, seed, model and timestamp so any
    prediction file can be traced back to its exact setup.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    predictions_path = out_dir / "predictions.jsonl"
    manifest_path = out_dir / "manifest.json"
    ledger_path = out_dir / "ledger.jsonl"

    if client is None:
        client = make_client(cfg.endpoint)

    needs_pool = cfg.docset_policy == "with_distractors" and any(
        len(r.non_oracle_documents()) < cfg.k for r in dataset.records
    )
    pool = cross_question_pool(dataset) if needs_pool else None

    completed = _read_ledger(ledger_path)
    todo = [r for r in dataset.records if r.record_id not in completed]

    lock = threading.Lock()

    def predict_one(record: QARecord) -> dict:
        rng = random.Random(derive_seed(cfg.seed, record.record_id))
        prompt = build_inference_prompt(record, cfg, rng, pool=pool)
        raw = client.complete(prompt)
        fallback = False
        if cfg.answer_extraction == "delimiter":
            try:
                answer = extract_final_answer(raw)
            except (MissingAnswerDelimiter, EmptyAnswer):
                answer = raw.strip()
                fallback = True
        else:
            answer = raw.strip()
        return {
            "record_id": record.record_id,
            "answer": answer,
            "fallback_used": fallback,
            "raw": raw,
        }

    n_queried = 0
    if todo:
        with open(ledger_path, "a", encoding="utf-8") as ledger:
            with ThreadPoolExecutor(max_workers=cfg.endpoint.concurrency_limit) as executor:
                futures = {executor.submit(predict_one, r): r for r in todo}
                for future in futures:
                    row = future.result()
                    with lock:
                        ledger.write(json_line(row) + "\n")
                        ledger.flush()
                    completed[row["record_id"]] = row
                    n_queried += 1

    with open(predictions_path, "w", encoding="utf-8") as fh:
        for record in dataset.records:
            row = completed[record.record_id]
            fh.write(json_line({"record_id": row["record_id"], "answer": row["answer"]}) + "\n")

    fallback_count = sum(1 for r in dataset.records if completed[r.record_id].get("fallback_used"))
    manifest = {
        "config": cfg.to_json(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "model_name": cfg.endpoint.model_name,
        "client": client.describe() if hasattr(client, "describe") else {"class": type(client).__name__},
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(),
        "n_records": len(dataset.records),
        "n_queried_this_run": n_queried,
        "fallback_count": fallback_count,
        "fallback_rate": fallback_count / len(dataset.records) if dataset.records else 0.0,
    }
    manifest_path.write_text(json.dumps(manifest, ensure_ascii=False, indent=2), encoding="utf-8")
    return RunResult(
        predictions_path=predictions_path,
        manifest_path=manifest_path,
        ledger_path=ledger_path,
        n_records=len(dataset.records),
        n_queried=n_queried,
        fallback_count=fallback_count,
    )


# ---------------------------------------------------------------- gain arithmetic

def _q2(value) -> Decimal:
    return Decimal(repr(float(value))).quantize(Decimal("0.01"))


@dataclass
class GainDelta:
    dataset: str
    minuend_method: str
    subtrahend_method: str
    minuend: float
    subtrahend: float
    delta: float
    expected: float | None = None

    @property
    def mismatch(self) -> bool:
        return self.expected is not None and _q2(self.expected) != _q2(self.delta)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "minuend_method": self.minuend_method,
            "subtrahend_method": self.subtrahend_method,
            "minuend": self.minuend,
            "subtrahend": self.subtrahend,
            "delta": self.delta,
            "expected": self.expected,
            "mismatch": self.mismatch,
        }


@dataclass
class GainTable:
    cells: dict[str, dict[str, float]]
    deltas: list[GainDelta]

    def mismatches(self) -> list[GainDelta]:
        return [d for d in self.deltas if d.mismatch]

    def render_text(self) -> str:
        lines = [f"{'dataset':<20}{'pair':<34}{'delta':>8}  note"]
        lines.append("-" * len(lines[0]))
        for d in self.deltas:
            pair = f"{d.minuend_method} - {d.subtrahend_method}"
            note = ""
            if d.expected is not None:
                note = "MISMATCH vs expected " + f"{d.expected:.2f}" if d.mismatch else "ok"
            lines.append(f"{d.dataset:<20}{pair:<34}{d.delta:>8.2f}  {note}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"cells": self.cells, "deltas": [d.to_json() for d in self.deltas]}


def compute_gains(
    cells: dict[str, dict[str, float]],
    pairs: list[tuple[str, str, str]],
    expected: dict[tuple[str, str, str], float] | None = None,
) -> GainTable:
    """Exact two-decimal differences between score cells.

    ``pairs`` lists (dataset, minuend method, subtrahend method); supplying
    an expected value flags any disagreement instead of hiding it.
    """
    expected = expected or {}
    deltas = []
    for dataset, minuend_method, subtrahend_method in pairs:
        dataset_cells = cells.get(dataset, {})
        for method in (minuend_method, subtrahend_method):
            if method not in dataset_cells or dataset_cells[method] is None:
                raise MissingCell(dataset, method)
        minuend = dataset_cells[minuend_method]
        subtrahend = dataset_cells[subtrahend_method]
        delta = float(_q2(minuend) - _q2(subtrahend))
        deltas.append(
            GainDelta(
                dataset=dataset,
                minuend_method=minuend_method,
                subtrahend_method=subtrahend_method,
                minuend=minuend,
                subtrahend=subtrahend,
                delta=delta,
                expected=expected.get((dataset, minuend_method, subtrahend_method)),
            )
        )
    return GainTable(cells=cells, deltas=deltas)


# -------------------------------------------------------------------- reporting

ABSENT_CELL = "—"


def render_score_table(
    cells: dict[str, dict[str, float | None]],
    rows: list[str],
    columns: list[str],
    title: str = "",
) -> str:
    """Aligned text table, methods as rows and dataset groups as columns.

    Absent cells render as a dash, matching missing table entries in the
    source score grids.
    """

    def fmt(value) -> str:
        return ABSENT_CELL if value is None else f"{value:.2f}"

    widths = {}
    for col in columns:
        cell_values = [fmt(cells.get(col, {}).get(row)) for row in rows]
        widths[col] = max(len(col), *(len(v) for v in cell_values)) + 2
    label_width = max(len(r) for r in rows) + 2

    lines = []
    if title:
        lines.append(title)
    header = " " * label_width + "".join(col.rjust(widths[col]) for col in columns)
    lines.append(header)
    lines.append("-" * len(header))
    for row in rows:
        line = row.ljust(label_width) + "".join(
            fmt(cells.get(col, {}).get(row)).rjust(widths[col]) for col in columns
        )
        lines.append(line)
    return "\n".join(lines)


def render_report(
    reports: dict[tuple[str, str], MetricReport],
    layout: dict,
) -> tuple[str, dict]:
    """Text + JSON score tables from metric reports.

    layout: {"metric": "em"|"f1", "rows": [methods...], "columns":
    [dataset groups...], "title": ...}. Reports are keyed by
    (method, dataset); layout slots without a report render as absent.
    A category sub-table is appended for every report that has one.
    """
    metric = layout.get("metric", "em")
    rows = layout["rows"]
    columns = layout["columns"]
    cells: dict[str, dict[str, float | None]] = {
        col: {
            row: (
                reports[(row, col)].aggregates[metric]
                if (row, col) in reports
                else None
            )
            for row in rows
        }
        for col in columns
    }
    text = render_score_table(cells, rows, columns, title=layout.get("title", ""))

    category_tables = {}
    for (method, dataset), report in reports.items():
        if report.by_category:
            categories = sorted(report.by_category)
            sub_cells = {
                cat: {
                    "EM": report.by_category[cat]["em"],
                    "F1": report.by_category[cat]["f1"],
                }
                for cat in categories
            }
            sub_text = render_score_table(
                sub_cells, ["EM", "F1"], categories,
                title=f"category breakdown: {method} / {dataset}",
            )
            text += "\n\n" + sub_text
            category_tables[f"{method}|{dataset}"] = report.by_category

    payload = {
        "metric": metric,
        "rows": rows,
        "columns": columns,
        "cells": cells,
        "by_category": category_tables,
    }
    return text, payload
