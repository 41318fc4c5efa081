"""Byte-level BPE tokenizer with exact round-trip guarantees.

The base vocabulary is the 256 byte values (ids 0-255) plus three specials
with fixed ids: BOS 256, EOS 257, PAD 258. Merge training is greedy on the
most frequent adjacent pair, ties broken by the smaller pair, so two runs on
the same corpus always produce the same merge list. Because the bases are
raw bytes there is no unknown-token path: decode(encode(s)) == s for every
valid UTF-8 string.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import RadsumError

BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
N_BASE = 259  # 256 byte ids + 3 specials

SPECIAL_IDS = (BOS_ID, EOS_ID, PAD_ID)


class BadSize(RadsumError):
    pass


class InvalidId(RadsumError):
    pass


@dataclass
class Vocab:
    """Merge list plus derived id range; ids are dense in [0, size)."""

    merges: list[tuple[int, int]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return N_BASE + len(self.merges)

    def merge_table(self) -> dict[tuple[int, int], int]:
        return {pair: N_BASE + i for i, pair in enumerate(self.merges)}


def _merge_sequence(ids: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    n = len(ids)
    while i < n:
        if i + 1 < n and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def build_vocab(corpus: list[str], target_size: int) -> Vocab:
    """Train merges greedily until ``target_size`` ids or no pair repeats.

    Each round merges the single most frequent adjacent id pair across the
    corpus; among equally frequent pairs the smallest (a, b) wins. Pairs
    never span string boundaries.
    """
    if target_size < N_BASE:
        raise BadSize(f"target_size must be at least {N_BASE}, got {target_size}")
    sequences = [list(text.encode("utf-8")) for text in corpus]
    merges: list[tuple[int, int]] = []
    while N_BASE + len(merges) < target_size:
        counts: Counter[tuple[int, int]] = Counter()
        for seq in sequences:
            counts.update(zip(seq, seq[1:]))
        if not counts:
            break
        best = min(counts.items(), key=lambda item: (-item[1], item[0]))
        if best[1] < 2:
            break
        pair = best[0]
        new_id = N_BASE + len(merges)
        merges.append(pair)
        sequences = [_merge_sequence(seq, pair, new_id) for seq in sequences]
    return Vocab(merges=merges)


def encode(text: str, vocab: Vocab) -> list[int]:
    """UTF-8 bytes, then the vocab's merges applied in training order."""
    ids = list(text.encode("utf-8"))
    for i, pair in enumerate(vocab.merges):
        ids = _merge_sequence(ids, pair, N_BASE + i)
    return ids


def decode(ids: list[int], vocab: Vocab) -> str:
    """Inverse of encode; special ids decode to the empty string.

    Byte sequences that are not valid UTF-8 (possible for generated ids)
    decode with replacement characters rather than failing.
    """
    expansion: list[bytes] = [bytes([b]) for b in range(256)]
    expansion.extend(b"" for _ in SPECIAL_IDS)
    for a, b in vocab.merges:
        expansion.append(expansion[a] + expansion[b])
    out = bytearray()
    for token in ids:
        if not 0 <= token < vocab.size:
            raise InvalidId(f"token id {token} out of range for vocab of size {vocab.size}")
        out.extend(expansion[token])
    return out.decode("utf-8", errors="replace")


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    """Write "bpe-v1 <size>" then one merge per line: "<id> <id> <new_id>"."""
    lines = [f"bpe-v1 {vocab.size}"]
    lines.extend(f"{a} {b} {N_BASE + i}" for i, (a, b) in enumerate(vocab.merges))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith("bpe-v1 "):
        raise BadSize(f"{path}: not a bpe-v1 vocab file")
    declared = int(lines[0].split()[1])
    merges = []
    for line in lines[1:]:
        a, b, new_id = (int(part) for part in line.split())
        if new_id != N_BASE + len(merges):
            raise InvalidId(f"{path}: merge ids not dense at {new_id}")
        merges.append((a, b))
    vocab = Vocab(merges=merges)
    if vocab.size != declared:
        raise BadSize(f"{path}: declared size {declared} but found {vocab.size}")
    return vocab
