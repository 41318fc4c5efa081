"""Report parsing, pair extraction, filtering, and corpus ingestion."""

import random

import pytest

from radsum.reports import (
    FILTER_RULES,
    CorpusStats,
    EmptyInput,
    FilterConfig,
    MalformedDelimiter,
    extract_pair,
    filter_pair,
    ingest_corpus,
    parse_report,
)

HYPEREXPANDED = (
    "FINDINGS: The lungs are hyperexpanded. Heart size normal. No mass or "
    "focal opacities seen. Stable degenerative changes of the thoracic spine.\n"
    "IMPRESSION: Hyperexpanded lungs without focal opacity."
)


def test_parse_two_section_report():
    report = parse_report(HYPEREXPANDED, "r1", "synthetic")
    assert report.findings == (
        "The lungs are hyperexpanded. Heart size normal. No mass or focal "
        "opacities seen. Stable degenerative changes of the thoracic spine."
    )
    assert report.impression == "Hyperexpanded lungs without focal opacity."


def test_parse_no_headers():
    report = parse_report("no headers at all, just prose", "r1", "synthetic")
    assert report.sections == {}
    assert report.findings is None
    assert report.impression is None


def test_parse_three_sections_in_order():
    report = parse_report(
        "INDICATION: cough.\nFINDINGS: clear.\nIMPRESSION: normal.", "r1", "synthetic"
    )
    assert list(report.sections) == ["INDICATION", "FINDINGS", "IMPRESSION"]
    assert report.findings == "clear."
    assert report.impression == "normal."


def test_parse_multiline_body():
    report = parse_report("FINDINGS: line one\nline two\nIMPRESSION: ok fine", "r1", "synthetic")
    assert report.findings == "line one\nline two"


def test_section_keys_are_uppercase_without_colon():
    report = parse_report("CLINICAL INDICATION: fever\nFINDINGS: clear", "r1", "synthetic")
    for key in report.sections:
        assert key == key.upper()
        assert not key.endswith(":")


def test_lowercase_header_is_not_a_header():
    report = parse_report("findings: clear\nIMPRESSION: ok", "r1", "synthetic")
    assert report.findings is None
    assert report.impression == "ok"


def test_blank_text_rejected():
    with pytest.raises(EmptyInput):
        parse_report("   \n \n", "r1", "synthetic")


def test_unknown_source_rejected():
    with pytest.raises(ValueError):
        parse_report("FINDINGS: x", "r1", "nonsense")


def test_extract_pair_both_present():
    report = parse_report(HYPEREXPANDED, "r1", "synthetic")
    pair = extract_pair(report)
    assert pair is not None
    assert pair[1] == "Hyperexpanded lungs without focal opacity."


def test_extract_pair_missing_impression():
    report = parse_report("FINDINGS: only findings here", "r1", "synthetic")
    assert extract_pair(report) is None


def test_extract_pair_whitespace_impression():
    report = parse_report("FINDINGS: present\nIMPRESSION:    ", "r1", "synthetic")
    assert extract_pair(report) is None


def test_filter_accepts_above_thresholds():
    assert filter_pair(("a b c d e f", "normal study"), FilterConfig()) is None


def test_filter_short_findings():
    # "too short" is 2 whitespace tokens, below the default minimum of 5.
    assert filter_pair(("too short", "normal study"), FilterConfig()) == "min_findings_tokens"


def test_filter_short_impression():
    assert filter_pair(("a b c d e f", "normal"), FilterConfig()) == "min_impression_tokens"


def test_filter_placeholder_run():
    assert filter_pair(("a b c d e f", "seen at ___"), FilterConfig()) == "placeholder"


def test_filter_two_underscores_pass():
    assert filter_pair(("a b c d e f", "seen at __ level"), FilterConfig()) is None


def test_stats_tsv_lists_all_rules():
    stats = CorpusStats(filtered_out={rule: 0 for rule in FILTER_RULES})
    text = stats.as_tsv()
    for rule in FILTER_RULES:
        assert rule in text


def test_ingest_directory(tmp_path):
    (tmp_path / "a.txt").write_text(HYPEREXPANDED, encoding="utf-8")
    (tmp_path / "b.txt").write_text("FINDINGS: findings only, five tokens", encoding="utf-8")
    (tmp_path / "c.txt").write_text(
        "FINDINGS: one two three four five six\nIMPRESSION: short story", encoding="utf-8"
    )
    reports, stats = ingest_corpus(tmp_path, "synthetic")
    assert [r.id for r in reports] == ["a.txt", "b.txt", "c.txt"]
    assert stats.total_reports == 3
    assert stats.with_findings == 3
    assert stats.with_impression == 2
    assert stats.usable_pairs == 2


def test_ingest_empty_directory(tmp_path):
    reports, stats = ingest_corpus(tmp_path, "synthetic")
    assert reports == []
    assert stats.total_reports == 0
    assert stats.usable_pairs == 0


def test_ingest_multi_report_file(tmp_path):
    path = tmp_path / "two.txt"
    path.write_text("FINDINGS: a b c d e\nIMPRESSION: x y\n=====\nFINDINGS: f g h i j\nIMPRESSION: z w", encoding="utf-8")
    reports, stats = ingest_corpus(path, "synthetic")
    assert [r.id for r in reports] == ["two.txt#0", "two.txt#1"]
    assert stats.usable_pairs == 2


def test_ingest_empty_segment_rejected(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("FINDINGS: a\n=====\n\n=====\nFINDINGS: b", encoding="utf-8")
    with pytest.raises(MalformedDelimiter):
        ingest_corpus(path, "synthetic")


def test_ingest_missing_path():
    with pytest.raises(OSError):
        ingest_corpus("/no/such/path/at/all", "synthetic")


def test_ingest_shipped_corpus():
    from _synthetic import REPO_ROOT

    reports, stats = ingest_corpus(REPO_ROOT / "data" / "synthetic_reports.txt", "synthetic")
    assert stats.total_reports == 16
    assert stats.usable_pairs == 16
    assert all(r.findings and r.impression for r in reports)


def test_filtered_counts_reconcile(tmp_path):
    # usable_pairs plus every filter rejection accounts for each extractable pair.
    texts = [
        "FINDINGS: a b c d e f\nIMPRESSION: fine here",
        "FINDINGS: tiny\nIMPRESSION: fine here",
        "FINDINGS: a b c d e f\nIMPRESSION: one",
        "FINDINGS: a b c d e f\nIMPRESSION: redacted ___ here",
        "IMPRESSION: no findings at all",
    ]
    for i, text in enumerate(texts):
        (tmp_path / f"r{i}.txt").write_text(text, encoding="utf-8")
    reports, stats = ingest_corpus(tmp_path, "synthetic")
    extractable = sum(1 for r in reports if extract_pair(r) is not None)
    assert stats.usable_pairs + sum(stats.filtered_out.values()) == extractable
    assert stats.usable_pairs == 1
    assert stats.filtered_out == {
        "min_findings_tokens": 1,
        "min_impression_tokens": 1,
        "placeholder": 1,
    }


# ---------------------------------------------------------------------------
# Randomized properties

_HEADERS = ["FINDINGS", "IMPRESSION", "INDICATION", "COMPARISON", "CLINICAL HISTORY"]
_WORDS = ["lungs", "clear", "heart", "effusion", "stable", "acute", "no", "mild", "left", "right"]


def _random_report(rng: random.Random) -> str:
    lines = []
    if rng.random() < 0.2:
        lines.append(" ".join(rng.choices(_WORDS, k=rng.randint(1, 6))))
    for header in rng.sample(_HEADERS, k=rng.randint(0, len(_HEADERS))):
        body = " ".join(rng.choices(_WORDS, k=rng.randint(0, 8)))
        lines.append(f"{header}: {body}")
        for _ in range(rng.randint(0, 2)):
            lines.append(" ".join(rng.choices(_WORDS, k=rng.randint(1, 6))))
    text = "\n".join(lines)
    return text if text.strip() else "fallback prose body"


def test_parse_idempotent_1000():
    """Re-parsing a report's own raw text reproduces identical structure."""
    rng = random.Random(90210)
    for case in range(1000):
        text = _random_report(rng)
        first = parse_report(text, f"r{case}", "synthetic")
        again = parse_report(first.raw_text, f"r{case}", "synthetic")
        assert again.sections == first.sections
        assert again.findings == first.findings
        assert again.impression == first.impression


def test_section_bodies_contain_no_headers_1000():
    rng = random.Random(4242)
    header_lines = {f"{h}:" for h in _HEADERS}
    for case in range(1000):
        report = parse_report(_random_report(rng), f"r{case}", "synthetic")
        for body in report.sections.values():
            for line in body.splitlines():
                assert line.split(" ")[0] not in header_lines
