"""Leaderboard tables, prediction files, and the ROUGE evaluation runner."""

import random

import pytest

from radsum.harness import (
    BadTable,
    IdMismatch,
    LeaderboardRow,
    corpus_to_rows,
    eval_rouge_run,
    fixture_path,
    leaderboard,
    load_table,
    read_text_records,
    write_text_records,
)
from radsum.rouge import corpus_rouge

from test_rouge import oracle_rouge_n


def _row(model_id, value, provenance="computed"):
    return LeaderboardRow(model_id, {"d/rouge-1": value}, provenance)


def test_row_rejects_bad_provenance():
    with pytest.raises(BadTable):
        LeaderboardRow("m", {"a": 0.5}, "guessed")


def test_row_rejects_out_of_range_value():
    with pytest.raises(BadTable):
        LeaderboardRow("m", {"a": 1.5}, "computed")


def test_load_table3_fixture():
    rows = load_table(fixture_path("table3_mimic_openi.tsv"))
    assert len(rows) == 17
    best = next(r for r in rows if r.model_id == "Radiology-Llama2")
    assert best.values == {
        "mimic-cxr/rouge-1": 0.4834,
        "mimic-cxr/rouge-2": 0.324,
        "mimic-cxr/rouge-l": 0.4427,
        "openi/rouge-1": 0.4185,
        "openi/rouge-2": 0.2569,
        "openi/rouge-l": 0.4087,
    }
    assert best.provenance == "fixture"


def test_load_table2_fixture():
    rows = load_table(fixture_path("table2_radiologist_10.tsv"))
    assert len(rows) == 8
    best = next(r for r in rows if r.model_id == "Radiology-Llama2")
    assert best.values == {
        "radiologist-10/rouge-1": 0.4726,
        "radiologist-10/rouge-2": 0.2948,
        "radiologist-10/rouge-l": 0.3757,
    }


def test_load_table_rejects_bad_header(tmp_path):
    path = tmp_path / "t.tsv"
    path.write_text("name\tscore\n", encoding="utf-8")
    with pytest.raises(BadTable):
        load_table(path)


def test_load_table_rejects_non_numeric(tmp_path):
    path = tmp_path / "t.tsv"
    path.write_text("model_id\ta\tprovenance\nm\thigh\tfixture\n", encoding="utf-8")
    with pytest.raises(BadTable) as err:
        load_table(path)
    assert "row 2" in str(err.value)


def test_leaderboard_sorts_descending():
    rows = [_row("low", 0.1), _row("high", 0.9), _row("mid", 0.5)]
    lines = leaderboard(rows).splitlines()
    assert [line.split("\t")[0] for line in lines[1:]] == ["high", "mid", "low"]


def test_leaderboard_tie_breaks_by_model_id():
    rows = [_row("zeta", 0.5), _row("alpha", 0.5)]
    lines = leaderboard(rows).splitlines()
    assert [line.split("\t")[0] for line in lines[1:]] == ["alpha", "zeta"]


def test_leaderboard_is_a_permutation():
    rng = random.Random(1)
    rows = [_row(f"m{i}", round(rng.random(), 4)) for i in range(12)]
    lines = leaderboard(rows).splitlines()[1:]
    assert sorted(line.split("\t")[0] for line in lines) == sorted(r.model_id for r in rows)


def test_leaderboard_markdown_bolds_best():
    rows = [
        LeaderboardRow("a", {"x": 0.9, "y": 0.1}, "computed"),
        LeaderboardRow("b", {"x": 0.2, "y": 0.8}, "computed"),
    ]
    text = leaderboard(rows, fmt="markdown")
    assert "**0.9000**" in text and "**0.8000**" in text
    assert "**0.2000**" not in text


def test_leaderboard_rejects_unknown_sort_key():
    with pytest.raises(BadTable):
        leaderboard([_row("m", 0.5)], sort_key="nope")


def test_leaderboard_rejects_mixed_columns():
    rows = [
        LeaderboardRow("a", {"x": 0.9}, "computed"),
        LeaderboardRow("b", {"y": 0.8}, "computed"),
    ]
    with pytest.raises(BadTable):
        leaderboard(rows)


def test_text_records_round_trip(tmp_path):
    path = tmp_path / "records.jsonl"
    records = [("s1", "first text"), ("s2", "second\nline")]
    write_text_records(path, records)
    assert read_text_records(path) == dict(records)


def test_text_records_reject_duplicates(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text(
        '{"source_id": "a", "text": "x"}\n{"source_id": "a", "text": "y"}\n',
        encoding="utf-8",
    )
    with pytest.raises(Exception) as err:
        read_text_records(path)
    assert "duplicate" in str(err.value)


def test_eval_rouge_run_identity(tmp_path):
    records = [("s1", "no acute disease"), ("s2", "left pleural effusion")]
    pred, ref = tmp_path / "pred.jsonl", tmp_path / "ref.jsonl"
    write_text_records(pred, records)
    write_text_records(ref, records)
    corpus, per_sample = eval_rouge_run(pred, ref)
    assert corpus.rouge1.f1 == 1.0
    assert corpus.rouge2.f1 == 1.0
    assert corpus.rougeL.f1 == 1.0
    lines = per_sample.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "source_id\trouge-1\trouge-2\trouge-l"
    assert lines[1] == "s1\t1.0000\t1.0000\t1.0000"
    assert per_sample.name == "pred.per_sample.tsv"


def test_eval_rouge_run_matches_oracle(tmp_path):
    rng = random.Random(5)
    words = ["no", "acute", "left", "effusion", "opacity", "clear"]
    preds = [(f"s{i}", " ".join(rng.choices(words, k=rng.randint(1, 8)))) for i in range(10)]
    refs = [(f"s{i}", " ".join(rng.choices(words, k=rng.randint(1, 8)))) for i in range(10)]
    pred, ref = tmp_path / "p.jsonl", tmp_path / "r.jsonl"
    write_text_records(pred, preds)
    write_text_records(ref, refs)
    corpus, _ = eval_rouge_run(pred, ref)
    expected = [oracle_rouge_n(p[1], r[1], 1) for p, r in zip(preds, refs)]
    mean_f1 = sum(e[2] for e in expected) / len(expected)
    assert abs(corpus.rouge1.f1 - mean_f1) < 1e-9


def test_eval_rouge_run_id_mismatch(tmp_path):
    pred, ref = tmp_path / "p.jsonl", tmp_path / "r.jsonl"
    write_text_records(pred, [("s1", "a"), ("s3", "b")])
    write_text_records(ref, [("s1", "a"), ("s2", "b")])
    with pytest.raises(IdMismatch) as err:
        eval_rouge_run(pred, ref)
    assert "s2" in str(err.value) and "s3" in str(err.value)


def test_corpus_to_rows_labels():
    corpus = corpus_rouge([("same", "same")])
    row = corpus_to_rows(corpus, "demo", "train")
    assert row.provenance == "computed"
    assert set(row.values) == {"train/rouge-1", "train/rouge-2", "train/rouge-l"}
    assert row.values["train/rouge-1"] == 1.0
