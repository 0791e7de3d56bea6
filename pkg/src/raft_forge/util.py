"""Small shared helpers: stable hashing, seeded-stream derivation, JSONL I/O."""

from __future__ import annotations

import hashlib
import json
import os
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .errors import IoFailure

_MASK64 = (1 << 64) - 1

# Fixed default seed so every run is reproducible unless overridden.
DEFAULT_SEED = 42


def stable_hash64(text: str) -> int:
    """Platform- and process-independent 64-bit hash of a string."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_seed(seed: int, record_id: str) -> int:
    """Per-record RNG seed, independent of iteration order and parallelism."""
    return (seed ^ stable_hash64(record_id)) & _MASK64


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_text(text: str) -> str:
    return sha256_bytes(text.encode("utf-8"))


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def json_line(obj) -> str:
    """One canonical JSON object per line; key order is the caller's."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def canonical_json(obj) -> str:
    """Key-sorted JSON used for content hashing."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str | os.PathLike, objs) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json_line(obj))
            fh.write("\n")


def read_jsonl(path: str | os.PathLike):
    """Yield (line_number, parsed object); raises IoFailure on unreadable files."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            yield lineno, json.loads(line)


def normalize_ws(text: str) -> str:
    """Collapse all whitespace runs to single spaces and trim."""
    return " ".join(text.split())


def round_half_up(value: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
