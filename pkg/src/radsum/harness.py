"""Evaluation plumbing: prediction files, score tables, leaderboards.

Predictions and references are JSON Lines with "source_id" and "text"
fields. Published score tables ship as TSV fixtures whose rows carry
provenance "fixture"; scores computed here are tagged "computed" so the two
are never silently mixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import RadsumError
from .rouge import CorpusRouge, corpus_rouge, pair_rouge

PROVENANCE = ("computed", "fixture")


class IdMismatch(RadsumError):
    pass


class BadTable(RadsumError):
    pass


@dataclass(frozen=True)
class LeaderboardRow:
    model_id: str
    values: dict[str, float]  # column label -> score in [0, 1]
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise BadTable(f"provenance must be one of {PROVENANCE}, got {self.provenance!r}")
        for label, value in self.values.items():
            if not 0.0 <= value <= 1.0:
                raise BadTable(f"{self.model_id}: {label} = {value} outside [0, 1]")


def fixture_path(name: str) -> Path:
    return Path(resources.files("radsum") / "fixtures" / name)


def load_table(path: str | Path) -> list[LeaderboardRow]:
    """Read a leaderboard TSV: model_id, metric columns, provenance."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise BadTable(f"{path}: empty file")
    header = lines[0].split("\t")
    if len(header) < 3 or header[0] != "model_id" or header[-1] != "provenance":
        raise BadTable(f"{path}: header must be model_id, metric columns, provenance")
    labels = header[1:-1]
    rows: list[LeaderboardRow] = []
    for row_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(header):
            raise BadTable(f"{path}: row {row_no}: expected {len(header)} fields, "
                           f"got {len(fields)}")
        try:
            values = {label: float(v) for label, v in zip(labels, fields[1:-1])}
        except ValueError:
            raise BadTable(f"{path}: row {row_no}: non-numeric score") from None
        rows.append(LeaderboardRow(model_id=fields[0], values=values, provenance=fields[-1]))
    if not rows:
        raise BadTable(f"{path}: no data rows")
    return rows


def leaderboard(rows: list[LeaderboardRow], sort_key: str | None = None,
                fmt: str = "tsv") -> str:
    """Render rows sorted descending by one column; ties order by model_id.

    The markdown variant bolds the best value in every column; both variants
    print scores to 4 decimals.
    """
    if not rows:
        raise BadTable("no rows to render")
    labels = list(rows[0].values.keys())
    for row in rows:
        if list(row.values.keys()) != labels:
            raise BadTable(f"{row.model_id}: columns {list(row.values)} differ from {labels}")
    if sort_key is None:
        sort_key = labels[0]
    if sort_key not in labels:
        raise BadTable(f"unknown sort column {sort_key!r}; have {labels}")

    ordered = sorted(rows, key=lambda r: (-r.values[sort_key], r.model_id))
    best = {label: max(r.values[label] for r in rows) for label in labels}

    if fmt == "tsv":
        out = ["\t".join(["model_id"] + labels + ["provenance"])]
        for row in ordered:
            cells = [f"{row.values[label]:.4f}" for label in labels]
            out.append("\t".join([row.model_id] + cells + [row.provenance]))
        return "\n".join(out) + "\n"
    if fmt == "markdown":
        out = ["| model_id | " + " | ".join(labels) + " | provenance |",
               "|---" * (len(labels) + 2) + "|"]
        for row in ordered:
            cells = []
            for label in labels:
                text = f"{row.values[label]:.4f}"
                if row.values[label] == best[label]:
                    text = f"**{text}**"
                cells.append(text)
            out.append("| " + " | ".join([row.model_id] + cells + [row.provenance]) + " |")
        return "\n".join(out) + "\n"
    raise BadTable(f"unknown format {fmt!r}; expected tsv or markdown")


# ---------------------------------------------------------------------------
# Prediction / reference files


def write_text_records(path: str | Path, records: list[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for source_id, text in records:
            fh.write(json.dumps({"source_id": source_id, "text": text},
                                ensure_ascii=False) + "\n")


def read_text_records(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise RadsumError(f"{path}:{line_no}: invalid JSON") from None
            if not isinstance(obj, dict) or "source_id" not in obj or "text" not in obj:
                raise RadsumError(f"{path}:{line_no}: need source_id and text fields")
            sid = obj["source_id"]
            if sid in out:
                raise RadsumError(f"{path}:{line_no}: duplicate source_id {sid!r}")
            out[sid] = obj["text"]
    return out


def eval_rouge_run(predictions_path: str | Path, references_path: str | Path,
                   per_sample_out: str | Path | None = None) -> tuple[CorpusRouge, Path]:
    """Score a prediction file against references; write per-sample TSV.

    The id sets must match exactly; otherwise the error names every id that
    is missing on either side.
    """
    predictions_path = Path(predictions_path)
    preds = read_text_records(predictions_path)
    refs = read_text_records(references_path)
    missing_refs = sorted(set(preds) - set(refs))
    missing_preds = sorted(set(refs) - set(preds))
    if missing_refs or missing_preds:
        parts = []
        if missing_preds:
            parts.append(f"no prediction for: {', '.join(missing_preds)}")
        if missing_refs:
            parts.append(f"no reference for: {', '.join(missing_refs)}")
        raise IdMismatch("; ".join(parts))

    ids = sorted(preds)
    per_sample = [(sid, pair_rouge(preds[sid], refs[sid])) for sid in ids]
    corpus = corpus_rouge((preds[sid], refs[sid]) for sid in ids)

    if per_sample_out is None:
        per_sample_out = predictions_path.with_name(predictions_path.stem + ".per_sample.tsv")
    per_sample_out = Path(per_sample_out)
    with open(per_sample_out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("source_id\trouge-1\trouge-2\trouge-l\n")
        for sid, score in per_sample:
            fh.write(f"{sid}\t{score.rouge1.f1:.4f}\t{score.rouge2.f1:.4f}"
                     f"\t{score.rougeL.f1:.4f}\n")
    return corpus, per_sample_out


def corpus_to_rows(corpus: CorpusRouge, model_id: str, dataset_label: str) -> LeaderboardRow:
    values = {f"{dataset_label}/{name}": score.f1 for name, score in corpus.as_rows()}
    return LeaderboardRow(model_id=model_id, values=values, provenance="computed")
