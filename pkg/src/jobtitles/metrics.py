"""Example-based F1, exact-match tables by label cardinality, misprediction samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ValidationError

Pair = tuple[Iterable[int], Iterable[int]]


def _check(truth: set, predicted: set, num_labels: int | None):
    if not truth:
        raise ValidationError("true label set is empty")
    if num_labels is not None:
        for i in truth | predicted:
            if not 0 <= i < num_labels:
                raise ValidationError(f"label index {i} outside [0, {num_labels})")


def example_f1(truth: Iterable[int], predicted: Iterable[int], num_labels: int | None = None) -> float:
    """2|T & P| / (|T| + |P|) for one instance."""
    truth, predicted = set(truth), set(predicted)
    _check(truth, predicted, num_labels)
    return 2.0 * len(truth & predicted) / (len(truth) + len(predicted))


def mean_f1(pairs: Sequence[Pair], num_labels: int | None = None) -> float:
    if not pairs:
        raise ValidationError("no predictions to score")
    return math.fsum(example_f1(t, p, num_labels) for t, p in pairs) / len(pairs)


def exact_match_table(pairs: Sequence[Pair], partial: bool = False) -> dict[int, tuple[int, int]]:
    """``{|truth|: (corrects, wrongs)}``.

    A pair is correct when the predicted set equals the true set, or, with
    ``partial``, when the two sets share at least one label.
    """
    table: dict[int, list[int]] = {}
    for truth, predicted in pairs:
        truth, predicted = set(truth), set(predicted)
        ok = bool(truth & predicted) if partial else truth == predicted
        bucket = table.setdefault(len(truth), [0, 0])
        bucket[0 if ok else 1] += 1
    return {k: (v[0], v[1]) for k, v in sorted(table.items())}


@dataclass(frozen=True)
class Misprediction:
    id: str
    truth: list[str]
    predicted: list[str]

    def to_json(self) -> dict:
        return {"id": self.id, "truth": self.truth, "predicted": self.predicted}


def misprediction_samples(
    ids: Sequence[str], pairs: Sequence[Pair], titles: Sequence[str], limit: int
) -> list[Misprediction]:
    """The first ``limit`` pairs (input order) whose sets differ, labels rendered as titles."""
    if limit < 0:
        raise ValidationError(f"limit must be >= 0, got {limit}")
    out = []
    for id_, (truth, predicted) in zip(ids, pairs):
        if len(out) >= limit:
            break
        truth, predicted = set(truth), set(predicted)
        if truth != predicted:
            out.append(Misprediction(id_, [titles[i] for i in sorted(truth)], [titles[i] for i in sorted(predicted)]))
    return out


@dataclass
class EvalReport:
    mean_f1: float
    n: int
    per_cardinality: dict[int, tuple[int, int]]
    samples: list[Misprediction] = field(default_factory=list)

    @property
    def mean_f1_percent(self) -> str:
        return f"{100.0 * self.mean_f1:.2f}"

    def to_json(self) -> dict:
        return {
            "mean_f1": self.mean_f1,
            "mean_f1_percent": self.mean_f1_percent,
            "n": self.n,
            "per_cardinality": {str(k): {"corrects": c, "wrongs": w} for k, (c, w) in self.per_cardinality.items()},
            "samples": [s.to_json() for s in self.samples],
        }

    def render_table(self) -> str:
        rows = [f"F1 (%): {self.mean_f1_percent}  (n={self.n})", "", f"{'# job titles':>12}  {'# corrects':>10}  {'# wrongs':>8}"]
        rows += [f"{k:>12}  {c:>10}  {w:>8}" for k, (c, w) in self.per_cardinality.items()]
        return "\n".join(rows)


def evaluate(
    ids: Sequence[str],
    pairs: Sequence[Pair],
    titles: Sequence[str],
    sample_limit: int = 0,
    partial: bool = False,
) -> EvalReport:
    return EvalReport(
        mean_f1=mean_f1(pairs, len(titles)),
        n=len(pairs),
        per_cardinality=exact_match_table(pairs, partial),
        samples=misprediction_samples(ids, pairs, titles, sample_limit),
    )


def render_samples(samples: Sequence[Misprediction]) -> str:
    if not samples:
        return "no mispredictions"
    lines = []
    for no, s in enumerate(samples, 1):
        lines.append(f"{no}. id={s.id}")
        lines.append(f"   true:      {', '.join(s.truth)}")
        lines.append(f"   predicted: {', '.join(s.predicted) if s.predicted else '[]'}")
    return "\n".join(lines)
