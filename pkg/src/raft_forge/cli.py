"""Single entry point wiring the stages into subcommands.

Exit codes: 0 success, 1 validation/usage error, 2 runtime or endpoint
failure. All randomness flows from config seeds; pipeline stages are
skipped when their inputs and recorded outputs still hash identically.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import clients, construct, corpus, cotgen, evalkit, runner
from .errors import (
    ConfigError,
    PipelineStageError,
    RaftForgeError,
    StageHashMismatch,
    ValidationError,
)
from .util import DEFAULT_SEED, canonical_json, sha256_file, sha256_text

log = logging.getLogger(__name__)


@dataclass
class GlobalConfig:
    log_level: str = "WARNING"
    cache_dir: str = ".raft_forge_cache"
    default_seed: int = DEFAULT_SEED


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so bad flags map to exit 1."""

    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _endpoint_config(args=None, obj: dict | None = None) -> clients.EndpointConfig:
    if obj is not None:
        return clients.EndpointConfig(
            base_url=obj["base_url"],
            model_name=obj.get("model_name", "unknown"),
            api_key=obj.get("api_key"),
            temperature=obj.get("temperature", 0.0),
            max_output_tokens=obj.get("max_output_tokens", 1024),
            request_timeout=obj.get("request_timeout", 60.0),
            max_retries=obj.get("max_retries", 3),
            concurrency_limit=obj.get("concurrency_limit", 4),
        )
    return clients.EndpointConfig(
        base_url=args.endpoint,
        model_name=args.model,
        temperature=args.temperature,
        max_output_tokens=args.max_tokens,
        request_timeout=args.timeout,
        max_retries=args.retries,
        concurrency_limit=args.concurrency,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="raft-forge", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p_corpus = sub.add_parser("corpus", help="parse source datasets into canonical records")
    corpus_sub = p_corpus.add_subparsers(dest="corpus_command", required=True)
    p_load = corpus_sub.add_parser("load")
    p_load.add_argument("--schema", required=True, choices=corpus.SCHEMAS)
    p_load.add_argument("--in", dest="in_path", required=True)
    p_load.add_argument("--out", required=True)
    p_load.add_argument("--split", default="train", choices=corpus.SPLITS)
    p_load.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True)

    p_construct = sub.add_parser("construct", help="build fine-tuning examples")
    p_construct.add_argument("--in", dest="in_path", required=True)
    p_construct.add_argument("--targets")
    p_construct.add_argument("--k", type=int, default=4)
    p_construct.add_argument("--method", default="multi", choices=("multi", "cross"))
    p_construct.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_construct.add_argument("--no-cot", action="store_true")
    p_construct.add_argument("--no-shuffle", action="store_true")
    p_construct.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True)
    p_construct.add_argument("--out", required=True)
    p_construct.add_argument("--report")

    p_cotgen = sub.add_parser("cotgen", help="generate chain-of-thought targets")
    p_cotgen.add_argument("--in", dest="in_path", required=True)
    p_cotgen.add_argument("--endpoint", required=True)
    p_cotgen.add_argument("--model", required=True)
    p_cotgen.add_argument("--lang", choices=corpus.LANGUAGES)
    p_cotgen.add_argument("--cache", required=True)
    p_cotgen.add_argument("--out", required=True)
    p_cotgen.add_argument("--temperature", type=float, default=0.0)
    p_cotgen.add_argument("--max-tokens", type=int, default=1024)
    p_cotgen.add_argument("--timeout", type=float, default=60.0)
    p_cotgen.add_argument("--retries", type=int, default=3)
    p_cotgen.add_argument("--concurrency", type=int, default=4)

    p_run = sub.add_parser("run", help="run a prompting experiment from a config file")
    p_run.add_argument("--config", required=True)

    p_eval = sub.add_parser("evaluate", help="score predictions against gold records")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--lang", choices=corpus.LANGUAGES)
    p_eval.add_argument("--field", default="short", choices=("short", "long"))
    p_eval.add_argument("--by-category", action="store_true")
    p_eval.add_argument("--lenient", action="store_true")
    p_eval.add_argument("--json-out")

    p_report = sub.add_parser("report", help="gain arithmetic over score tables")
    p_report.add_argument("--scores", required=True)
    p_report.add_argument("--expect-gains")
    p_report.add_argument("--json-out")

    p_pipe = sub.add_parser("pipeline", help="end-to-end dataset build from a config file")
    p_pipe.add_argument("--config", required=True)

    return parser


# ------------------------------------------------------------------ subcommands

def _cmd_corpus(args) -> int:
    handle = corpus.load_dataset(args.in_path, args.schema, split=args.split, strict=args.strict)
    report = corpus.validate_dataset(handle)
    corpus.save_canonical(handle, args.out)
    print(
        f"loaded {len(handle.records)} records "
        f"({len(handle.skipped)} skipped, {len(report.violations)} violations) -> {args.out}"
    )
    for skip in handle.skipped:
        print(f"  skipped item {skip['index']}: {skip['reason']}")
    for violation in report.violations:
        print(f"  violation {violation.invariant} on {violation.record_id}: {violation.detail}")
    return 0 if report.ok() else 1


def _cmd_construct(args) -> int:
    handle = corpus.load_canonical(args.in_path)
    cfg = construct.ConstructionConfig(
        k=args.k,
        method="multi_doc" if args.method == "multi" else "cross_question",
        seed=args.seed,
        include_cot=not args.no_cot,
        shuffle_context=not args.no_shuffle,
    )
    targets = cotgen.load_targets(args.targets) if args.targets else {}
    if cfg.include_cot and not targets:
        raise ConfigError("--targets is required unless --no-cot is set")
    examples, report = construct.build_raft_dataset(handle, cfg, targets, strict=args.strict)
    construct.save_examples(examples, args.out)
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_json(), ensure_ascii=False, indent=2), encoding="utf-8"
        )
    print(f"built {report.emitted}/{report.total} examples -> {args.out}")
    for skip in report.skipped:
        print(f"  skipped {skip['record_id']}: {skip['reason']}")
    return 0


def _cmd_cotgen(args) -> int:
    handle = corpus.load_canonical(args.in_path)
    if args.lang:
        off_language = sum(1 for r in handle.records if r.language != args.lang)
        if off_language:
            log.warning("%d records differ from --lang %s", off_language, args.lang)
    cfg = _endpoint_config(args=args)
    cache = cotgen.ResponseCache(args.cache)
    results, stats = cotgen.generate_targets(handle.records, cfg, cache)
    cotgen.save_targets(results, handle.records, args.out)
    print(
        f"generated {stats.generated} targets ({stats.cache_hits} cache hits, "
        f"hit rate {stats.hit_rate:.0%}) -> {args.out}"
    )
    return 0


def _cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read run config {config_path}: {exc}") from exc
    base = config_path.parent

    dataset = corpus.load_canonical(base / config["dataset"])
    cfg = runner.ExperimentConfig(
        mode=config["mode"],
        endpoint=_endpoint_config(obj=config["endpoint"]),
        docset_policy=config.get("docset_policy", "none"),
        prompt_template_id=config.get("prompt_template_id"),
        language=config.get("language", "en"),
        answer_extraction=config.get("answer_extraction", "delimiter"),
        seed=config.get("seed", DEFAULT_SEED),
        k=config.get("k", 4),
    )
    out_dir = base / config.get("out_dir", "run")
    result = runner.run_experiment(cfg, dataset, out_dir=out_dir)
    print(
        f"ran {result.n_queried} queries over {result.n_records} records "
        f"({result.fallback_count} fallback extractions) -> {result.predictions_path}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    handle = corpus.load_canonical(args.gold)
    if args.lang:
        off_language = sum(1 for r in handle.records if r.language != args.lang)
        if off_language:
            log.warning("%d gold records differ from --lang %s", off_language, args.lang)
    report = evalkit.score_predictions(
        args.pred,
        handle,
        answer_field=args.field,
        strict=not args.lenient,
        with_categories=args.by_category,
    )
    print(report.render_text())
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(report.to_json(), ensure_ascii=False, indent=2), encoding="utf-8"
        )
    return 0


def _cmd_report(args) -> int:
    try:
        scores = json.loads(Path(args.scores).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read scores file: {exc}") from exc
    cells = scores["cells"]
    pairs = [tuple(p) for p in scores.get("pairs", [])]
    expected = {}
    if args.expect_gains:
        try:
            entries = json.loads(Path(args.expect_gains).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read expected-gains file: {exc}") from exc
        for entry in entries:
            key = (entry["dataset"], entry["minuend"], entry["subtrahend"])
            expected[key] = entry["expected"]
            if key not in pairs:
                pairs.append(key)
    table = runner.compute_gains(cells, pairs, expected)
    print(table.render_text())
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(table.to_json(), ensure_ascii=False, indent=2), encoding="utf-8"
        )
    mismatches = table.mismatches()
    if mismatches:
        print(f"{len(mismatches)} delta(s) disagree with supplied expected values")
    return 0


# -------------------------------------------------------------------- pipeline

def _hash_files(paths: dict[str, Path]) -> dict[str, str]:
    return {name: sha256_file(path) for name, path in paths.items()}


def _run_stage(manifest: dict, name: str, config_slice, inputs: dict[str, Path],
               outputs: dict[str, Path], action) -> str:
    """Run or skip one pipeline stage based on content hashes."""
    config_hash = sha256_text(canonical_json(config_slice))
    for label, path in inputs.items():
        if not Path(path).exists():
            raise PipelineStageError(name, f"input {label} missing: {path}")
    input_hashes = _hash_files(inputs)
    prev = manifest["stages"].get(name)
    if (
        prev is not None
        and prev["config_hash"] == config_hash
        and prev["inputs"] == input_hashes
        and all(Path(p).exists() for p in outputs.values())
    ):
        for label, path in outputs.items():
            recorded = prev["outputs"].get(label)
            if recorded != sha256_file(path):
                raise StageHashMismatch(name, f"output {label} no longer matches its recorded hash")
        log.info("stage %s skipped (hashes match)", name)
        return "skipped"
    action()
    manifest["stages"][name] = {
        "config_hash": config_hash,
        "inputs": input_hashes,
        "outputs": _hash_files(outputs),
    }
    return "ran"


def pipeline(config: dict, base_dir: Path) -> Path:
    """load -> generate -> construct, writing every intermediate artifact
    plus a manifest sufficient to re-run (or skip) each stage."""
    for key in ("source", "schema", "out_dir"):
        if key not in config:
            raise ConfigError(f"pipeline config missing '{key}'")
    out_dir = base_dir / config["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "pipeline_manifest.json"
    manifest = {"stages": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    source = base_dir / config["source"]
    records_path = out_dir / "records.jsonl"
    targets_path = out_dir / "targets.jsonl"
    raft_path = out_dir / "raft.jsonl"
    build_report_path = out_dir / "build_report.json"

    construct_cfg_obj = config.get("construct", {})
    include_cot = construct_cfg_obj.get("include_cot", True)
    statuses = {}

    def save_manifest():
        manifest_path.write_text(
            json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
        )

    load_slice = {
        "schema": config["schema"],
        "split": config.get("split", "train"),
        "strict": config.get("strict", True),
    }

    def do_load():
        handle = corpus.load_dataset(
            source, config["schema"], split=load_slice["split"], strict=load_slice["strict"]
        )
        corpus.save_canonical(handle, records_path)

    statuses["load"] = _run_stage(
        manifest, "load", load_slice, {"source": source}, {"records": records_path}, do_load
    )
    save_manifest()

    if include_cot:
        if "endpoint" not in config:
            raise ConfigError("pipeline config missing 'endpoint' (needed when include_cot)")
        endpoint_cfg = _endpoint_config(obj=config["endpoint"])
        cache_dir = base_dir / config.get("cache_dir", str(out_dir / "cache"))
        generate_slice = {"endpoint": endpoint_cfg.describe()}

        def do_generate():
            handle = corpus.load_canonical(records_path)
            cache = cotgen.ResponseCache(cache_dir)
            results, _ = cotgen.generate_targets(handle.records, endpoint_cfg, cache)
            cotgen.save_targets(results, handle.records, targets_path)

        statuses["generate"] = _run_stage(
            manifest, "generate", generate_slice,
            {"records": records_path}, {"targets": targets_path}, do_generate,
        )
        save_manifest()

    build_cfg = construct.ConstructionConfig(
        k=construct_cfg_obj.get("k", 4),
        method=construct_cfg_obj.get("method", "multi_doc"),
        seed=construct_cfg_obj.get("seed", config.get("seed", DEFAULT_SEED)),
        include_cot=include_cot,
        shuffle_context=construct_cfg_obj.get("shuffle_context", True),
    )
    construct_slice = {
        "k": build_cfg.k,
        "method": build_cfg.method,
        "seed": build_cfg.seed,
        "include_cot": build_cfg.include_cot,
        "shuffle_context": build_cfg.shuffle_context,
        "strict": config.get("strict", True),
    }
    construct_inputs = {"records": records_path}
    if include_cot:
        construct_inputs["targets"] = targets_path

    def do_construct():
        handle = corpus.load_canonical(records_path)
        targets = cotgen.load_targets(targets_path) if include_cot else {}
        examples, report = construct.build_raft_dataset(
            handle, build_cfg, targets, strict=config.get("strict", True)
        )
        construct.save_examples(examples, raft_path)
        build_report_path.write_text(
            json.dumps(report.to_json(), ensure_ascii=False, indent=2, sort_keys=True),
            encoding="utf-8",
        )

    statuses["construct"] = _run_stage(
        manifest, "construct", construct_slice, construct_inputs,
        {"raft": raft_path, "build_report": build_report_path}, do_construct,
    )
    save_manifest()

    for stage, status in statuses.items():
        print(f"stage {stage}: {status}")
    print(f"artifacts in {out_dir}")
    return out_dir


def _cmd_pipeline(args) -> int:
    config_path = Path(args.config)
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read pipeline config {config_path}: {exc}") from exc
    pipeline(config, config_path.parent)
    return 0


_COMMANDS = {
    "construct": _cmd_construct,
    "cotgen": _cmd_cotgen,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "pipeline": _cmd_pipeline,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        if args.command == "corpus":
            return _cmd_corpus(args)
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except RaftForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
