"""Human evaluation: load rating sheets and aggregate the five criteria.

A rating sheet is a TSV of one row per (rater, sample, model) with integer
scores 1..5 on understandability, coherence, relevance, conciseness and
clinical utility. Aggregation sums each rater's scores over samples and then
averages the rater totals, so a model rated by two raters over ten samples
tops out at 50 per criterion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import RadsumError

CRITERIA = ("understandability", "coherence", "relevance", "conciseness", "clinical_utility")
RATINGS_HEADER = ("rater_id", "sample_id", "model_id") + CRITERIA
SCORE_MIN, SCORE_MAX = 1, 5


class MalformedRow(RadsumError):
    pass


class DuplicateKey(RadsumError):
    pass


class OutOfRange(RadsumError):
    pass


class IncompleteDesign(RadsumError):
    pass


class NeedTwoRaters(RadsumError):
    pass


@dataclass(frozen=True)
class ExpertRating:
    rater_id: str
    sample_id: str
    model_id: str
    scores: tuple[int, ...]  # aligned with CRITERIA

    def score(self, criterion: str) -> int:
        return self.scores[CRITERIA.index(criterion)]


@dataclass(frozen=True)
class CriterionAggregate:
    model_id: str
    criterion: str
    score: float
    max_possible: int


def load_ratings(path: str | Path) -> list[ExpertRating]:
    """Parse and validate a rating sheet; errors carry 1-based row numbers."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MalformedRow(f"{path}: empty file")
    header = tuple(lines[0].rstrip("\n").split("\t"))
    if header != RATINGS_HEADER:
        raise MalformedRow(f"{path}: row 1: header must be {' '.join(RATINGS_HEADER)}")

    ratings: list[ExpertRating] = []
    seen: set[tuple[str, str, str]] = set()
    for row_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(RATINGS_HEADER):
            raise MalformedRow(f"{path}: row {row_no}: expected "
                               f"{len(RATINGS_HEADER)} fields, got {len(fields)}")
        rater, sample, model = (f.strip() for f in fields[:3])
        if not rater or not sample or not model:
            raise MalformedRow(f"{path}: row {row_no}: empty id field")
        try:
            scores = tuple(int(f) for f in fields[3:])
        except ValueError:
            raise MalformedRow(f"{path}: row {row_no}: scores must be integers") from None
        for criterion, value in zip(CRITERIA, scores):
            if not SCORE_MIN <= value <= SCORE_MAX:
                raise OutOfRange(f"{path}: row {row_no}: {criterion} = {value} "
                                 f"outside [{SCORE_MIN}, {SCORE_MAX}]")
        key = (rater, sample, model)
        if key in seen:
            raise DuplicateKey(f"{path}: row {row_no}: repeated key {key}")
        seen.add(key)
        ratings.append(ExpertRating(rater_id=rater, sample_id=sample, model_id=model,
                                    scores=scores))
    return ratings


def _check_complete(ratings: list[ExpertRating]) -> tuple[list[str], list[tuple[str, str]]]:
    raters = sorted({r.rater_id for r in ratings})
    cells = sorted({(r.sample_id, r.model_id) for r in ratings})
    have = {(r.rater_id, r.sample_id, r.model_id) for r in ratings}
    missing = [(rater, sample, model)
               for rater in raters for sample, model in cells
               if (rater, sample, model) not in have]
    if missing:
        shown = ", ".join(f"{r}/{s}/{m}" for r, s, m in missing[:5])
        more = "" if len(missing) <= 5 else f" and {len(missing) - 5} more"
        raise IncompleteDesign(f"missing rating cells: {shown}{more}")
    return raters, cells


def aggregate_ratings(ratings: list[ExpertRating]) -> list[CriterionAggregate]:
    """Per model and criterion: sum over samples per rater, mean over raters."""
    if not ratings:
        raise IncompleteDesign("no ratings to aggregate")
    raters, cells = _check_complete(ratings)
    by_key = {(r.rater_id, r.sample_id, r.model_id): r for r in ratings}
    models = sorted({model for _, model in cells})

    out: list[CriterionAggregate] = []
    for model in models:
        samples = [sample for sample, m in cells if m == model]
        for ci, criterion in enumerate(CRITERIA):
            totals = [sum(by_key[(rater, sample, model)].scores[ci] for sample in samples)
                      for rater in raters]
            out.append(CriterionAggregate(model_id=model, criterion=criterion,
                                          score=sum(totals) / len(totals),
                                          max_possible=SCORE_MAX * len(samples)))
    return out


def inter_rater(ratings: list[ExpertRating]) -> dict[str, float]:
    """Mean absolute score difference between the two raters, per criterion."""
    if not ratings:
        raise NeedTwoRaters("no ratings")
    raters, cells = _check_complete(ratings)
    if len(raters) != 2:
        raise NeedTwoRaters(f"need exactly two raters, got {len(raters)}: {raters}")
    by_key = {(r.rater_id, r.sample_id, r.model_id): r for r in ratings}
    r1, r2 = raters
    out: dict[str, float] = {}
    for ci, criterion in enumerate(CRITERIA):
        diffs = [abs(by_key[(r1, s, m)].scores[ci] - by_key[(r2, s, m)].scores[ci])
                 for s, m in cells]
        out[criterion] = sum(diffs) / len(diffs)
    return out
