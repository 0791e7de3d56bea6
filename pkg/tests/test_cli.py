"""Subcommand dispatch, exit codes, and the hash-gated pipeline."""

import json
import shutil
from pathlib import Path

from raft_forge.cli import dispatch

from .conftest import write_dureader_file, write_hotpot_file


def _pipeline_config(tmp_path, n_records=10, include_cot=True, seed=42):
    write_hotpot_file(tmp_path / "source.json", n_records=n_records)
    config = {
        "source": "source.json",
        "schema": "hotpotqa",
        "strict": True,
        "out_dir": "artifacts",
        "cache_dir": "cache",
        "endpoint": {"base_url": "mock:cot", "model_name": "mock-cot", "temperature": 0.0},
        "construct": {
            "k": 4,
            "method": "multi_doc",
            "seed": seed,
            "include_cot": include_cot,
            "shuffle_context": True,
        },
    }
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def test_unknown_subcommand_exits_1(capsys):
    assert dispatch(["frobnicate"]) == 1
    captured = capsys.readouterr()
    assert "usage" in captured.err.lower()


def test_bad_flag_exits_1(capsys):
    assert dispatch(["evaluate", "--no-such-flag"]) == 1


def test_corpus_load_cli(tmp_path, capsys):
    src = write_hotpot_file(tmp_path / "hotpot.json")
    out = tmp_path / "records.jsonl"
    code = dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(src), "--out", str(out)])
    assert code == 0
    assert out.exists()
    assert "loaded 3 records" in capsys.readouterr().out


def test_corpus_load_missing_file_exits_2(tmp_path):
    code = dispatch(
        ["corpus", "load", "--schema", "hotpotqa", "--in", str(tmp_path / "nope.json"),
         "--out", str(tmp_path / "o.jsonl")]
    )
    assert code == 2


def test_corpus_load_bad_item_strict_exits_1(tmp_path):
    items = json.loads(write_hotpot_file(tmp_path / "h.json").read_text())
    del items[0]["answer"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(items), encoding="utf-8")
    code = dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(bad),
                     "--out", str(tmp_path / "o.jsonl")])
    assert code == 1


def test_cotgen_and_construct_cli(tmp_path, capsys):
    src = write_hotpot_file(tmp_path / "hotpot.json")
    records = tmp_path / "records.jsonl"
    targets = tmp_path / "targets.jsonl"
    raft = tmp_path / "raft.jsonl"
    assert dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(src), "--out", str(records)]) == 0
    assert dispatch(["cotgen", "--in", str(records), "--endpoint", "mock:cot", "--model", "m",
                     "--lang", "en", "--cache", str(tmp_path / "cache"), "--out", str(targets)]) == 0
    assert targets.exists()
    assert dispatch(["construct", "--in", str(records), "--targets", str(targets),
                     "--k", "4", "--method", "multi", "--seed", "7", "--out", str(raft)]) == 0
    rows = [json.loads(l) for l in raft.read_text().splitlines()]
    assert len(rows) == 3
    assert all(len(r["context"]) == 6 for r in rows)  # 2 oracles + 4 distractors


def test_construct_no_cot_needs_no_targets(tmp_path):
    src = write_hotpot_file(tmp_path / "hotpot.json")
    records = tmp_path / "records.jsonl"
    raft = tmp_path / "raft.jsonl"
    assert dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(src), "--out", str(records)]) == 0
    assert dispatch(["construct", "--in", str(records), "--no-cot", "--out", str(raft)]) == 0
    rows = [json.loads(l) for l in raft.read_text().splitlines()]
    assert all("##" not in r["target"] for r in rows)


def test_construct_with_cot_requires_targets(tmp_path):
    src = write_hotpot_file(tmp_path / "hotpot.json")
    records = tmp_path / "records.jsonl"
    dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(src), "--out", str(records)])
    assert dispatch(["construct", "--in", str(records), "--out", str(tmp_path / "r.jsonl")]) == 1


def test_evaluate_cli(tmp_path, capsys):
    src = write_dureader_file(tmp_path / "du.jsonl")
    gold = tmp_path / "gold.jsonl"
    dispatch(["corpus", "load", "--schema", "dureader", "--in", str(src), "--out", str(gold)])
    preds = tmp_path / "preds.jsonl"
    rows = [json.loads(l) for l in gold.read_text().splitlines()]
    preds.write_text(
        "\n".join(json.dumps({"record_id": r["record_id"], "answer": r["gold_short"][0]},
                             ensure_ascii=False) for r in rows),
        encoding="utf-8",
    )
    code = dispatch(["evaluate", "--pred", str(preds), "--gold", str(gold), "--lang", "zh",
                     "--field", "short", "--json-out", str(tmp_path / "report.json")])
    assert code == 0
    out = capsys.readouterr().out
    assert "100.00" in out
    assert json.loads((tmp_path / "report.json").read_text())["aggregates"]["em"] == 100.0


def test_report_cli(tmp_path, capsys):
    scores = {
        "cells": {"DuReader": {"RAFT": 57.81, "DSF + RAG": 39.91, "zero-shot": 13.47}},
        "pairs": [["DuReader", "RAFT", "zero-shot"]],
    }
    expect = [{"dataset": "DuReader", "minuend": "RAFT", "subtrahend": "DSF + RAG", "expected": 19.9}]
    scores_path = tmp_path / "scores.json"
    expect_path = tmp_path / "expect.json"
    scores_path.write_text(json.dumps(scores), encoding="utf-8")
    expect_path.write_text(json.dumps(expect), encoding="utf-8")
    code = dispatch(["report", "--scores", str(scores_path), "--expect-gains", str(expect_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "44.34" in out
    assert "17.90" in out and "MISMATCH" in out


def test_run_cli_with_mock(tmp_path, capsys):
    src = write_hotpot_file(tmp_path / "hotpot.json")
    records = tmp_path / "records.jsonl"
    dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(src), "--out", str(records)])
    config = {
        "dataset": "records.jsonl",
        "mode": "rag",
        "docset_policy": "oracle_only",
        "language": "en",
        "seed": 3,
        "endpoint": {"base_url": "mock:echo=##Answer: yes", "model_name": "mock"},
        "out_dir": "run_out",
    }
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")
    assert dispatch(["run", "--config", str(config_path)]) == 0
    preds = tmp_path / "run_out" / "predictions.jsonl"
    rows = [json.loads(l) for l in preds.read_text().splitlines()]
    assert [r["answer"] for r in rows] == ["yes"] * 3


def test_cotgen_unreachable_endpoint_exits_2_preserves_cache(tmp_path):
    src = write_hotpot_file(tmp_path / "hotpot.json", n_records=2)
    records = tmp_path / "records.jsonl"
    cache = tmp_path / "cache"
    dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(src), "--out", str(records)])
    # warm the cache with the mock endpoint under the same model/temperature
    assert dispatch(["cotgen", "--in", str(records), "--endpoint", "mock:cot", "--model", "m",
                     "--cache", str(cache), "--out", str(tmp_path / "t1.jsonl")]) == 0
    cached_files = sorted(p.name for p in cache.iterdir())
    assert len(cached_files) == 2

    # add a third record, then point at a dead endpoint: cached records hit,
    # the new one fails, exit code 2, cache untouched
    bigger = write_hotpot_file(tmp_path / "hotpot3.json", n_records=3)
    dispatch(["corpus", "load", "--schema", "hotpotqa", "--in", str(bigger), "--out", str(records)])
    code = dispatch(["cotgen", "--in", str(records), "--endpoint", "http://127.0.0.1:9/v1",
                     "--model", "m", "--cache", str(cache), "--out", str(tmp_path / "t2.jsonl"),
                     "--retries", "0", "--timeout", "0.2"])
    assert code == 2
    assert sorted(p.name for p in cache.iterdir()) == cached_files
    assert not (tmp_path / "t2.jsonl").exists()


# -------------------------------------------------------------------- pipeline

def test_pipeline_full_run_artifacts(tmp_path, capsys):
    config_path = _pipeline_config(tmp_path)
    assert dispatch(["pipeline", "--config", str(config_path)]) == 0
    out_dir = tmp_path / "artifacts"
    for name in ("records.jsonl", "targets.jsonl", "raft.jsonl", "build_report.json",
                 "pipeline_manifest.json"):
        assert (out_dir / name).exists(), name
    rows = [json.loads(l) for l in (out_dir / "raft.jsonl").read_text().splitlines()]
    assert len(rows) == 10
    captured = capsys.readouterr().out
    assert captured.count(": ran") == 3


def test_pipeline_rerun_skips_everything(tmp_path, capsys):
    config_path = _pipeline_config(tmp_path)
    dispatch(["pipeline", "--config", str(config_path)])
    before = (tmp_path / "artifacts" / "raft.jsonl").read_bytes()
    capsys.readouterr()
    assert dispatch(["pipeline", "--config", str(config_path)]) == 0
    captured = capsys.readouterr().out
    assert captured.count(": skipped") == 3
    assert (tmp_path / "artifacts" / "raft.jsonl").read_bytes() == before


def test_pipeline_corrupted_intermediate_names_stage(tmp_path, capsys):
    config_path = _pipeline_config(tmp_path)
    dispatch(["pipeline", "--config", str(config_path)])
    records = tmp_path / "artifacts" / "records.jsonl"
    records.write_text(records.read_text(encoding="utf-8") + "\n", encoding="utf-8")
    code = dispatch(["pipeline", "--config", str(config_path)])
    assert code == 2
    assert "load" in capsys.readouterr().err


def test_pipeline_input_change_reruns(tmp_path, capsys):
    config_path = _pipeline_config(tmp_path)
    dispatch(["pipeline", "--config", str(config_path)])
    write_hotpot_file(tmp_path / "source.json", n_records=12)
    capsys.readouterr()
    assert dispatch(["pipeline", "--config", str(config_path)]) == 0
    assert capsys.readouterr().out.count(": ran") == 3
    rows = (tmp_path / "artifacts" / "raft.jsonl").read_text().splitlines()
    assert len(rows) == 12


def test_pipeline_byte_reproducible_from_scratch(tmp_path):
    config_path = _pipeline_config(tmp_path)
    dispatch(["pipeline", "--config", str(config_path)])
    raft_first = (tmp_path / "artifacts" / "raft.jsonl").read_bytes()
    targets_first = (tmp_path / "artifacts" / "targets.jsonl").read_bytes()
    shutil.rmtree(tmp_path / "artifacts")
    shutil.rmtree(tmp_path / "cache")
    dispatch(["pipeline", "--config", str(config_path)])
    assert (tmp_path / "artifacts" / "raft.jsonl").read_bytes() == raft_first
    assert (tmp_path / "artifacts" / "targets.jsonl").read_bytes() == targets_first


def test_pipeline_ablation_skips_generate(tmp_path, capsys):
    config_path = _pipeline_config(tmp_path, include_cot=False)
    assert dispatch(["pipeline", "--config", str(config_path)]) == 0
    out_dir = tmp_path / "artifacts"
    assert not (out_dir / "targets.jsonl").exists()
    rows = [json.loads(l) for l in (out_dir / "raft.jsonl").read_text().splitlines()]
    assert all("##" not in r["target"] for r in rows)
