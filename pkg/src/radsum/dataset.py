"""Instruction-pair dataset: building, prompt rendering, splitting, storage.

Every pair carries the same instruction string; the findings text is the
input and the impression is the target output. Prompts use the
"### Instruction / ### Input / ### Response" scaffold. Persistence is JSON
Lines, one object per line, UTF-8 with LF endings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import RadsumError
from .reports import FilterConfig, RadiologyReport, extract_pair, filter_pair

DEFAULT_TEMPLATE = "Derive the impression from findings in the radiology report"

PROMPT_HEADER = "### Instruction:"
INPUT_HEADER = "### Input:"
RESPONSE_HEADER = "### Response:"


class BadRatios(RadsumError):
    pass


class MalformedRecord(RadsumError):
    pass


@dataclass
class InstructionPair:
    instruction: str
    input: str
    output: str
    source_id: str


@dataclass
class DatasetSplit:
    train: list[InstructionPair]
    val: list[InstructionPair]
    test: list[InstructionPair]
    seed: int
    ratios: tuple[float, float, float]


def build_pairs(
    reports: list[RadiologyReport],
    template: str = DEFAULT_TEMPLATE,
    rules: FilterConfig | None = None,
) -> list[InstructionPair]:
    """One instruction pair per report that has an accepted findings/impression pair."""
    if not template:
        raise ValueError("template must be non-empty")
    rules = rules or FilterConfig()
    pairs = []
    for report in reports:
        extracted = extract_pair(report)
        if extracted is None or filter_pair(extracted, rules) is not None:
            continue
        findings, impression = extracted
        pairs.append(InstructionPair(template, findings, impression, report.id))
    return pairs


def render_prompt(pair: InstructionPair, include_output: bool) -> str:
    """Render the fixed prompt scaffold around a pair.

    Layout: each header line is followed by a blank line and then the field
    text; the response section is present only when ``include_output`` is
    set. The rendering without the output is a strict prefix of the
    rendering with it.
    """
    text = (
        f"{PROMPT_HEADER}\n\n{pair.instruction}\n\n"
        f"{INPUT_HEADER}\n\n{pair.input}\n\n"
        f"{RESPONSE_HEADER}"
    )
    if include_output:
        text += f"\n\n{pair.output}"
    return text.rstrip()


def _split_key(seed: int, source_id: str) -> bytes:
    return hashlib.sha256(f"{seed}:{source_id}".encode("utf-8")).digest()


def split_dataset(
    pairs: list[InstructionPair],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Deterministically partition pairs into train/val/test.

    The shuffle orders distinct source_ids by a seeded hash of the id, so a
    pair's split membership depends only on (seed, ratios, its source_id and
    the id population), never on input list order. Split sizes follow the
    cumulative-floor rule: boundary i sits at floor(n * sum(ratios[:i+1])).
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise BadRatios(f"ratios must be three non-negative fractions, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 1, got sum {sum(ratios)!r}")

    unique_ids = sorted({p.source_id for p in pairs}, key=lambda s: _split_key(seed, s))
    n = len(unique_ids)
    b1 = int(n * ratios[0])
    b2 = int(n * (ratios[0] + ratios[1]))
    buckets = (set(unique_ids[:b1]), set(unique_ids[b1:b2]), set(unique_ids[b2:]))

    order = {sid: i for i, sid in enumerate(unique_ids)}
    members: tuple[list[InstructionPair], ...] = ([], [], [])
    for pair in sorted(pairs, key=lambda p: order[p.source_id]):
        for bucket, member_list in zip(buckets, members):
            if pair.source_id in bucket:
                member_list.append(pair)
                break
    return DatasetSplit(*members, seed=seed, ratios=tuple(ratios))


_FIELDS = ("instruction", "input", "output", "source_id")


def write_pairs(pairs: list[InstructionPair], path: str | Path) -> None:
    """Write pairs as JSON Lines (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            record = {name: getattr(pair, name) for name in _FIELDS}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_pairs(path: str | Path) -> list[InstructionPair]:
    """Read a JSON Lines pairs file; field-for-field inverse of write_pairs."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise MalformedRecord(f"{path}:{lineno}: record is not an object")
            for name in _FIELDS:
                if name not in record:
                    raise MalformedRecord(f"{path}:{lineno}: missing field {name!r}")
                if not isinstance(record[name], str):
                    raise MalformedRecord(f"{path}:{lineno}: field {name!r} is not a string")
            pairs.append(InstructionPair(**{name: record[name] for name in _FIELDS}))
    return pairs
