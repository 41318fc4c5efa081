"""Byte-pair vocabulary training, encode/decode, persistence."""

import random

import pytest

from radsum.dataset import render_prompt
from radsum.tokenizer import (
    BOS_ID,
    EOS_ID,
    N_BASE,
    PAD_ID,
    BadSize,
    InvalidId,
    Vocab,
    build_vocab,
    decode,
    encode,
    load_vocab,
    save_vocab,
)

from _synthetic import make_pairs

HYPEREXPANDED_FINDINGS = (
    "The lungs are hyperexpanded. Heart size normal. No mass or focal "
    "opacities seen. Stable degenerative changes of the thoracic spine."
)


def test_special_ids():
    assert (BOS_ID, EOS_ID, PAD_ID, N_BASE) == (256, 257, 258, 259)


def test_minimum_size_no_merges():
    vocab = build_vocab(["anything at all"], 259)
    assert vocab.merges == []
    assert vocab.size == 259


def test_single_merge_on_aaaa():
    # ('a', 'a') is the only repeating pair, so one merge is trained; applying
    # it left to right packs "aaaa" into two merged tokens.
    vocab = build_vocab(["aaaa"], 260)
    assert vocab.merges == [(97, 97)]
    assert encode("aaaa", vocab) == [259, 259]
    assert decode([259, 259], vocab) == "aaaa"


def test_below_minimum_rejected():
    with pytest.raises(BadSize):
        build_vocab(["x"], 258)


def test_build_stops_when_no_pair_repeats():
    vocab = build_vocab(["abcdef"], 400)
    assert vocab.size == 259


def test_build_deterministic():
    corpus = [render_prompt(p, True) for p in make_pairs()]
    assert build_vocab(corpus, 300).merges == build_vocab(corpus, 300).merges


def test_tie_breaks_to_smaller_pair():
    # "abab" and "caca": pairs (a,b) and (c,a) both occur twice; so do (b,a)
    # and (a,c). The smallest pair, (97, 98), must merge first.
    vocab = build_vocab(["abab", "caca"], 260)
    assert vocab.merges[0] == (97, 98)


def test_encode_empty():
    assert encode("", Vocab()) == []


def test_encode_bytes_identity():
    assert encode("ab", Vocab()) == [97, 98]


def test_encode_never_emits_specials():
    corpus = [render_prompt(p, True) for p in make_pairs()]
    vocab = build_vocab(corpus, 350)
    for text in corpus:
        ids = encode(text, vocab)
        assert not any(t in (BOS_ID, EOS_ID, PAD_ID) for t in ids)


def test_decode_empty():
    assert decode([], Vocab()) == ""


def test_decode_specials_to_empty():
    assert decode([BOS_ID, 104, 105, EOS_ID, PAD_ID], Vocab()) == "hi"


def test_decode_out_of_range():
    with pytest.raises(InvalidId):
        decode([259], Vocab())


def test_round_trip_findings_sentence():
    vocab = build_vocab([HYPEREXPANDED_FINDINGS], 300)
    assert decode(encode(HYPEREXPANDED_FINDINGS, vocab), vocab) == HYPEREXPANDED_FINDINGS


def test_merged_encoding_no_longer_than_bytes():
    corpus = [render_prompt(p, True) for p in make_pairs()]
    vocab = build_vocab(corpus, 400)
    for text in corpus + ["unrelated text with no merges maybe"]:
        assert len(encode(text, vocab)) <= len(text.encode("utf-8"))


def test_save_load_round_trip(tmp_path):
    corpus = [render_prompt(p, True) for p in make_pairs()]
    vocab = build_vocab(corpus, 320)
    path = tmp_path / "vocab.txt"
    save_vocab(vocab, path)
    loaded = load_vocab(path)
    assert loaded.merges == vocab.merges
    assert path.read_text(encoding="utf-8").startswith(f"bpe-v1 {vocab.size}\n")


def test_load_rejects_wrong_header(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("bpe-v2 259\n", encoding="utf-8")
    with pytest.raises(BadSize):
        load_vocab(path)


def test_load_rejects_sparse_ids(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("bpe-v1 261\n97 97 259\n98 98 261\n", encoding="utf-8")
    with pytest.raises(InvalidId):
        load_vocab(path)


# ---------------------------------------------------------------------------
# Randomized properties


def test_round_trip_identity_1000():
    rng = random.Random(31)
    alphabet = "ab XYZ012\n\t\"é漢🙂"
    corpus = ["abab cdcd", "the lungs the lungs", "é漢🙂é漢🙂"]
    vocabs = [Vocab(), build_vocab(corpus, 280), build_vocab(corpus, 330)]
    for case in range(1000):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        vocab = vocabs[case % len(vocabs)]
        assert decode(encode(text, vocab), vocab) == text
