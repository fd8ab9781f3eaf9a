"""JSONL corpus/label ingestion and report emission."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Any, Iterable

from .text import SalienceLabels, TrainingExample, TurningPoint

SCORE_COLUMNS = ("story_id", "sentence_idx", "deletion", "shifting", "disruption", "summarization")


class SchemaError(ValueError):
    def __init__(self, path, line: int, field: str, message: str):
        super().__init__(f"{path}:{line}: field {field!r}: {message}")
        self.path = path
        self.line = line
        self.field = field


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise SchemaError(path, lineno, "<record>", f"invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise SchemaError(path, lineno, "<record>", "record must be a JSON object")
            yield lineno, obj


def _sentences(path, lineno, obj, key, required):
    if key not in obj:
        if required:
            raise SchemaError(path, lineno, key, "missing")
        return None
    val = obj[key]
    if val is None and not required:
        return None
    if not isinstance(val, list) or not val:
        raise SchemaError(path, lineno, key, "expected a non-empty list of sentences")
    for i, s in enumerate(val):
        if not isinstance(s, str) or not s.strip():
            raise SchemaError(path, lineno, key, f"sentence {i + 1} must be a non-empty string")
    return tuple(val)


def _story_id(path, lineno, obj):
    sid = obj.get("id")
    if not isinstance(sid, str) or not sid:
        raise SchemaError(path, lineno, "id", "expected a non-empty string")
    return sid


def parse_example(obj: dict, path="<record>", lineno: int = 0) -> TrainingExample:
    return TrainingExample(
        id=_story_id(path, lineno, obj),
        anchor=_sentences(path, lineno, obj, "anchor", True),
        twin=_sentences(path, lineno, obj, "twin", False),
        distractor=_sentences(path, lineno, obj, "distractor", False),
    )


def read_corpus(path) -> list[TrainingExample]:
    return [parse_example(obj, path, n) for n, obj in _iter_json_lines(path)]


def example_record(ex: TrainingExample) -> dict:
    return {
        "id": ex.id,
        "anchor": list(ex.anchor),
        "twin": None if ex.twin is None else list(ex.twin),
        "distractor": None if ex.distractor is None else list(ex.distractor),
    }


def write_jsonl(path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    return [obj for _, obj in _iter_json_lines(path)]


def write_corpus(path, examples: Iterable[TrainingExample]) -> None:
    write_jsonl(path, (example_record(e) for e in examples))


def read_labels(path) -> list[SalienceLabels]:
    out = []
    for lineno, obj in _iter_json_lines(path):
        sid = _story_id(path, lineno, obj)
        counts = obj.get("counts")
        if not isinstance(counts, list) or not counts:
            raise SchemaError(path, lineno, "counts", "expected a non-empty list of integers")
        if not all(isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in counts):
            raise SchemaError(path, lineno, "counts", "entries must be non-negative integers")
        tps = obj.get("turning_points")
        parsed = None
        if tps is not None:
            if not isinstance(tps, list):
                raise SchemaError(path, lineno, "turning_points", "expected a list or null")
            parsed = []
            for t in tps:
                if not isinstance(t, dict):
                    raise SchemaError(path, lineno, "turning_points", "entries must be objects")
                tp, sent = t.get("tp"), t.get("sentence")
                if not isinstance(tp, int) or not 1 <= tp <= 5:
                    raise SchemaError(path, lineno, "turning_points.tp", "expected an integer in 1..5")
                if not isinstance(sent, int) or not 1 <= sent <= len(counts):
                    raise SchemaError(path, lineno, "turning_points.sentence",
                                      f"expected a sentence index in 1..{len(counts)}")
                parsed.append(TurningPoint(tp, sent))
            parsed = tuple(parsed)
        out.append(SalienceLabels(sid, tuple(counts), parsed))
    return out


def labels_record(lab: SalienceLabels) -> dict:
    tps = None
    if lab.turning_points is not None:
        tps = [{"tp": t.tp, "sentence": t.sentence} for t in lab.turning_points]
    return {"id": lab.id, "counts": list(lab.counts), "turning_points": tps}


def write_labels(path, labels: Iterable[SalienceLabels]) -> None:
    write_jsonl(path, (labels_record(lab) for lab in labels))


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "item") and callable(obj.item):
        return obj.item()
    return obj


def write_report(path, report: Any) -> None:
    """Write any dataclass/dict report as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(report), fh, indent=2)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_scores_csv(path, rows: Iterable[dict]) -> None:
    """Per-sentence scores; column order is :data:`SCORE_COLUMNS`.

    ``sentence_idx`` is 1-based. Floats are written with ``repr`` so that
    reading them back is exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r in rows:
            w.writerow([r["story_id"], r["sentence_idx"]] + [repr(float(r[c])) for c in SCORE_COLUMNS[2:]])


def read_scores_csv(path) -> dict[str, dict[str, list[float]]]:
    """Return ``{story_id: {operation: [score per sentence]}}`` in sentence order;
    all-NaN operation columns are left out."""
    per: dict[str, dict[int, dict[str, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SCORE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(path, 1, missing[0], "missing column")
        for lineno, row in enumerate(reader, start=2):
            try:
                idx = int(row["sentence_idx"])
                vals = {c: float(row[c]) for c in SCORE_COLUMNS[2:]}
            except ValueError as e:
                raise SchemaError(path, lineno, "sentence_idx/score", str(e)) from None
            per.setdefault(row["story_id"], {})[idx] = vals
    out = {}
    for sid, by_idx in per.items():
        idxs = sorted(by_idx)
        if idxs != list(range(1, len(idxs) + 1)):
            raise SchemaError(path, 0, "sentence_idx", f"story {sid!r} does not cover 1..{len(idxs)}")
        cols = {c: [by_idx[i][c] for i in idxs] for c in SCORE_COLUMNS[2:]}
        # an operation that was not run is written as NaN throughout
        out[sid] = {c: v for c, v in cols.items() if not all(math.isnan(x) for x in v)}
    return out
