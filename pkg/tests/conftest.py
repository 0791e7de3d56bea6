"""Shared fixture builders: tiny in-memory datasets in each source schema."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from raft_forge.corpus import DatasetHandle, Document, QARecord


def make_hotpot_item(i: int, n_paragraphs: int = 10, n_oracle: int = 2) -> dict:
    titles = [f"Topic {i}-{j}" for j in range(n_paragraphs)]
    context = [
        [titles[j], [f"Paragraph {i}-{j} sentence one.", f"It mentions entity E{i}{j}."]]
        for j in range(n_paragraphs)
    ]
    supporting = [[titles[j], 0] for j in range(n_oracle)]
    return {
        "_id": f"hp{i:04d}",
        "question": f"Which entity connects topic {i}?",
        "answer": f"E{i}0" if i % 3 else "yes",
        "type": "bridge" if i % 2 == 0 else "comparison",
        "level": "medium",
        "supporting_facts": supporting,
        "context": context,
    }


def write_hotpot_file(path: Path, n_records: int = 3, n_paragraphs: int = 10, n_oracle: int = 2) -> Path:
    items = [make_hotpot_item(i, n_paragraphs, n_oracle) for i in range(n_records)]
    path.write_text(json.dumps(items, ensure_ascii=False), encoding="utf-8")
    return path


def make_pubmed_payload(n_records: int = 3) -> dict:
    payload = {}
    for i in range(n_records):
        payload[f"pm{i:04d}"] = {
            "QUESTION": f"Does compound C{i} reduce symptom S{i}?",
            "CONTEXTS": [
                f"Study {i} enrolled {20 + i} patients.",
                f"Compound C{i} was administered daily.",
                f"Symptom S{i} scores changed significantly.",
            ],
            "LONG_ANSWER": f"Compound C{i} shows a measurable effect on symptom S{i}.",
            "final_decision": ["yes", "no", "maybe"][i % 3],
        }
    return payload


def write_pubmed_file(path: Path, n_records: int = 3) -> Path:
    path.write_text(json.dumps(make_pubmed_payload(n_records), ensure_ascii=False), encoding="utf-8")
    return path


def write_dureader_file(path: Path, n_records: int = 3) -> Path:
    lines = []
    for i in range(n_records):
        lines.append(
            json.dumps(
                {
                    "id": f"du{i:04d}",
                    "question": f"问题{i}是什么？",
                    "document": f"文档{i}说明了答案{i}的来龙去脉，内容充分。",
                    "answer": f"答案{i}",
                },
                ensure_ascii=False,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_multi_doc_record(i: int, n_oracle: int = 1, n_other: int = 8) -> QARecord:
    docs = []
    for j in range(n_oracle):
        docs.append(
            Document(
                doc_id=f"o{j}",
                title=f"Oracle {i}-{j}",
                text=f"Oracle text {i}-{j} holds the decisive fact F{i}.",
                role="oracle",
            )
        )
    for j in range(n_other):
        docs.append(
            Document(
                doc_id=f"d{j}",
                title=f"Distractor {i}-{j}",
                text=f"Distractor text {i}-{j} rambles about unrelated matter M{i}{j}.",
                role="distractor",
            )
        )
    return QARecord(
        record_id=f"rec{i:04d}",
        question=f"What is the decisive fact in case {i}?",
        language="en",
        documents=docs,
        gold_short=[f"F{i}"],
        category="bridge" if i % 2 == 0 else "comparison",
    )


def make_multi_doc_handle(n_records: int = 3, n_oracle: int = 1, n_other: int = 8) -> DatasetHandle:
    records = [make_multi_doc_record(i, n_oracle, n_other) for i in range(n_records)]
    return DatasetHandle(schema="hotpotqa", records=records)


def make_single_doc_record(i: int, language: str = "en") -> QARecord:
    if language == "zh":
        text = f"第{i}篇文档详细描述了事件{i}，其结论是答案{i}。"
        question = f"事件{i}的结论是什么？"
        answer = f"答案{i}"
    else:
        text = f"Document {i} narrates event {i} and concludes with answer A{i}."
        question = f"What does document {i} conclude?"
        answer = f"A{i}"
    return QARecord(
        record_id=f"sd{i:04d}",
        question=question,
        language=language,
        documents=[Document(doc_id="ctx", title=None, text=text, role="oracle")],
        gold_short=[answer],
    )


def make_single_doc_handle(n_records: int = 10, language: str = "en") -> DatasetHandle:
    records = [make_single_doc_record(i, language) for i in range(n_records)]
    return DatasetHandle(schema="pubmedqa" if language == "en" else "dureader", records=records)


@pytest.fixture
def hotpot_file(tmp_path):
    return write_hotpot_file(tmp_path / "hotpot.json")


@pytest.fixture
def pubmed_file(tmp_path):
    return write_pubmed_file(tmp_path / "pubmed.json")


@pytest.fixture
def dureader_file(tmp_path):
    return write_dureader_file(tmp_path / "dureader.jsonl")
