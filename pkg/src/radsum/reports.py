"""Radiology report ingestion and findings/impression extraction.

Reports are segmented on line-anchored uppercase headers ("FINDINGS:",
"IMPRESSION:", "CLINICAL INDICATION:", ...). Unknown headers are kept as
sections so later dataset builders can use them. Pairs are quality-filtered
before they become training data.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import RadsumError

# A header line starts with an all-caps word or two-word phrase followed by a
# colon; the rest of the line is the start of the section body.
_HEADER_RE = re.compile(r"^([A-Z]+(?: [A-Z]+)?):(.*)$")

# De-identification placeholder: a run of three or more underscores.
_PLACEHOLDER_RE = re.compile(r"___+")

SOURCES = ("mimic-cxr-style", "openi-style", "synthetic")

MULTI_REPORT_DELIMITER = "====="


class EmptyInput(RadsumError):
    pass


class MalformedDelimiter(RadsumError):
    pass


@dataclass
class RadiologyReport:
    """One free-text report with its recognized sections.

    ``sections`` maps normalized header (uppercase, no trailing colon) to the
    stripped section body, in document order. ``findings`` / ``impression``
    are set only when the corresponding section body is non-empty after
    trimming.
    """

    id: str
    source: str
    raw_text: str
    sections: dict[str, str] = field(default_factory=dict)
    findings: str | None = None
    impression: str | None = None


@dataclass
class FilterConfig:
    min_findings_tokens: int = 5
    min_impression_tokens: int = 2


@dataclass
class CorpusStats:
    total_reports: int = 0
    with_findings: int = 0
    with_impression: int = 0
    usable_pairs: int = 0
    filtered_out: dict[str, int] = field(default_factory=dict)

    def as_tsv(self) -> str:
        """Stats as a TSV block of (name, count) rows."""
        rows = [
            ("total_reports", self.total_reports),
            ("with_findings", self.with_findings),
            ("with_impression", self.with_impression),
            ("usable_pairs", self.usable_pairs),
        ]
        rows.extend(sorted(self.filtered_out.items()))
        return "\n".join(f"{name}\t{count}" for name, count in rows)


def parse_report(raw_text: str, id: str, source: str) -> RadiologyReport:
    """Segment ``raw_text`` into sections and pull out findings/impression.

    A report with zero recognized headers is not an error; it simply has
    empty sections and no findings/impression.
    """
    if not raw_text.strip():
        raise EmptyInput(f"report {id!r}: raw text is blank")
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}, expected one of {SOURCES}")

    sections: dict[str, str] = {}
    current: str | None = None
    bodies: dict[str, list[str]] = {}
    for line in raw_text.splitlines():
        m = _HEADER_RE.match(line)
        if m:
            current = m.group(1)
            bodies[current] = [m.group(2)]
        elif current is not None:
            bodies[current].append(line)
        # Text before the first header belongs to no section.
    for header, lines in bodies.items():
        sections[header] = "\n".join(lines).strip()

    report = RadiologyReport(id=id, source=source, raw_text=raw_text, sections=sections)
    findings = sections.get("FINDINGS", "").strip()
    impression = sections.get("IMPRESSION", "").strip()
    report.findings = findings or None
    report.impression = impression or None
    return report


def extract_pair(report: RadiologyReport) -> tuple[str, str] | None:
    """Return (findings, impression) when both are present and non-blank."""
    findings = (report.findings or "").strip()
    impression = (report.impression or "").strip()
    if findings and impression:
        return findings, impression
    return None


def filter_pair(pair: tuple[str, str], rules: FilterConfig) -> str | None:
    """Apply quality filters; return the rejecting rule name or None on accept.

    Rules: findings shorter than ``min_findings_tokens`` whitespace tokens,
    impression shorter than ``min_impression_tokens``, or an impression
    containing a de-identification placeholder run (three or more
    consecutive underscores).
    """
    findings, impression = pair
    if len(findings.split()) < rules.min_findings_tokens:
        return "min_findings_tokens"
    if len(impression.split()) < rules.min_impression_tokens:
        return "min_impression_tokens"
    if _PLACEHOLDER_RE.search(impression):
        return "placeholder"
    return None


FILTER_RULES = ("min_findings_tokens", "min_impression_tokens", "placeholder")


def _split_multi_report(text: str, name: str) -> list[str] | None:
    """Split a multi-report file on delimiter lines, or None if single-report."""
    lines = text.splitlines()
    if not any(line == MULTI_REPORT_DELIMITER for line in lines):
        return None
    segments: list[list[str]] = [[]]
    for line in lines:
        if line == MULTI_REPORT_DELIMITER:
            segments.append([])
        else:
            segments[-1].append(line)
    texts = ["\n".join(seg) for seg in segments]
    for i, seg_text in enumerate(texts):
        if not seg_text.strip():
            raise MalformedDelimiter(f"{name}: segment {i} is empty")
    return texts


def ingest_corpus(
    path: str | Path,
    source: str,
    rules: FilterConfig | None = None,
) -> tuple[list[RadiologyReport], CorpusStats]:
    """Read one file or a directory of files into parsed reports plus stats.

    A file containing a line of exactly five equals signs is split into one
    report per segment, with ids ``<name>#0``, ``<name>#1``, ... Reports are
    returned in lexicographic id order, so ingestion is deterministic.
    """
    rules = rules or FilterConfig()
    path = Path(path)
    if not path.exists():
        raise OSError(f"no such path: {path}")
    files = sorted(p for p in path.iterdir() if p.is_file()) if path.is_dir() else [path]

    reports: list[RadiologyReport] = []
    for file in files:
        text = file.read_text(encoding="utf-8")
        segments = _split_multi_report(text, file.name)
        if segments is None:
            reports.append(parse_report(text, file.name, source))
        else:
            for i, seg in enumerate(segments):
                reports.append(parse_report(seg, f"{file.name}#{i}", source))
    reports.sort(key=lambda r: r.id)

    stats = CorpusStats(filtered_out={rule: 0 for rule in FILTER_RULES})
    stats.total_reports = len(reports)
    for report in reports:
        if report.findings is not None:
            stats.with_findings += 1
        if report.impression is not None:
            stats.with_impression += 1
        pair = extract_pair(report)
        if pair is None:
            continue
        rejected_by = filter_pair(pair, rules)
        if rejected_by is None:
            stats.usable_pairs += 1
        else:
            stats.filtered_out[rejected_by] += 1
    return reports, stats
