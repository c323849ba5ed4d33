"""Job-posting corpus: label catalog, JSONL ingestion, dev split and statistics."""

from __future__ import annotations

import json
import logging
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, UnknownTitleError, ValidationError

log = logging.getLogger(__name__)

BUILTIN = "builtin"
LANGUAGES = ("vi", "en")


def fold_title(raw: str) -> str:
    """Lookup key for a title: NFC, case-folded, inner whitespace collapsed."""
    return " ".join(unicodedata.normalize("NFC", raw).casefold().split())


@dataclass(frozen=True)
class LabelCatalog:
    titles: tuple[str, ...]
    aliases: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.titles:
            raise ValidationError("label catalog is empty")
        keys: dict[str, int] = {}
        for i, title in enumerate(self.titles):
            key = fold_title(title)
            if not key:
                raise ValidationError(f"blank title at position {i}")
            if key in keys:
                raise ValidationError(f"duplicate canonical title {title!r} (positions {keys[key]} and {i})")
            keys[key] = i
        lookup = dict(keys)
        for alias, idx in self.aliases.items():
            if not 0 <= idx < len(self.titles):
                raise ValidationError(f"alias {alias!r} points outside the catalog: {idx}")
            key = fold_title(alias)
            if lookup.get(key, idx) != idx:
                raise ValidationError(f"alias {alias!r} is ambiguous between {lookup[key]} and {idx}")
            lookup[key] = idx
        object.__setattr__(self, "_lookup", lookup)

    def __len__(self) -> int:
        return len(self.titles)

    def index(self, raw: str) -> int:
        return normalize_title(raw, self)

    def names(self, indices: Iterable[int]) -> list[str]:
        return [self.titles[i] for i in sorted(indices)]

    def to_lines(self) -> list[str]:
        """Serialize in the catalog file layout (title, then tab-separated aliases)."""
        by_index: dict[int, list[str]] = {}
        for alias, idx in self.aliases.items():
            by_index.setdefault(idx, []).append(alias)
        return ["\t".join([t, *by_index.get(i, [])]) for i, t in enumerate(self.titles)]


def parse_catalog(lines: Iterable[str], source: str = "<catalog>") -> LabelCatalog:
    titles: list[str] = []
    aliases: dict[str, int] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        title, *alts = [c.strip() for c in line.split("\t")]
        if not title:
            raise ParseError("line starts with an empty title", lineno, source)
        idx = len(titles)
        titles.append(title)
        for alt in alts:
            if alt:
                aliases[alt] = idx
    if not titles:
        raise ValidationError(f"{source}: catalog file is empty")
    return LabelCatalog(tuple(titles), aliases)


def load_catalog(path: str | Path = BUILTIN) -> LabelCatalog:
    """Read a catalog file, or the 68 shipped job titles when ``path`` is ``"builtin"``."""
    if str(path) == BUILTIN:
        text = resources.files("jobtitles").joinpath("data/job_titles.txt").read_text(encoding="utf-8")
        return parse_catalog(text.splitlines(), "builtin")
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_catalog(fh, str(path))


def normalize_title(raw: str, catalog: LabelCatalog) -> int:
    key = fold_title(raw)
    if not key:
        raise ValidationError("empty title")
    try:
        return catalog._lookup[key]
    except KeyError:
        raise UnknownTitleError(raw) from None


@dataclass(frozen=True)
class JobRecord:
    id: str
    description: str
    labels: frozenset[int]
    language: str | None = None

    def __post_init__(self):
        if not self.labels:
            raise ValidationError(f"record {self.id!r} has no labels")
        if any(i < 0 for i in self.labels):
            raise ValidationError(f"record {self.id!r} has a negative label index")
        if not self.description.strip():
            raise ValidationError(f"record {self.id!r} has an empty description")
        if self.language is not None and self.language not in LANGUAGES:
            raise ValidationError(f"record {self.id!r}: unknown language tag {self.language!r}")

    def to_json(self, catalog: LabelCatalog) -> dict:
        out = {"id": self.id, "description": self.description, "labels": catalog.names(self.labels)}
        if self.language is not None:
            out["language"] = self.language
        return out


def parse_record(obj: object, catalog: LabelCatalog, skip_unknown: bool = False) -> JobRecord:
    if not isinstance(obj, dict):
        raise ValidationError("record is not a JSON object")
    for key in ("id", "description", "labels"):
        if key not in obj:
            raise ValidationError(f"missing field {key!r}")
    raw_labels = obj["labels"]
    if not isinstance(raw_labels, list) or not raw_labels:
        raise ValidationError(f"record {obj['id']!r}: 'labels' must be a non-empty array")
    if not isinstance(obj["description"], str):
        raise ValidationError(f"record {obj['id']!r}: 'description' must be a string")
    labels = set()
    for raw in raw_labels:
        if not isinstance(raw, str):
            raise ValidationError(f"record {obj['id']!r}: label {raw!r} is not a string")
        try:
            labels.add(normalize_title(raw, catalog))
        except UnknownTitleError:
            if not skip_unknown:
                raise
            log.warning("record %r: dropping unknown title %r", obj["id"], raw)
    if not labels:
        raise ValidationError(f"record {obj['id']!r}: no resolvable labels")
    return JobRecord(str(obj["id"]), obj["description"], frozenset(labels), obj.get("language"))


def load_corpus(path: str | Path, catalog: LabelCatalog, skip_unknown: bool = False) -> list[JobRecord]:
    """Load a JSON-Lines corpus; blank lines are ignored, file order is kept.

    Unknown titles abort loading unless ``skip_unknown`` is set, in which case
    they are dropped with a warning (a record left with no labels still fails).
    """
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", lineno, str(path)) from None
            try:
                records.append(parse_record(obj, catalog, skip_unknown))
            except UnknownTitleError as exc:
                raise UnknownTitleError(exc.raw, f"{path}:{lineno}: ") from None
            except ValidationError as exc:
                raise ParseError(str(exc), lineno, str(path)) from exc
    return records


def write_corpus(records: Iterable[JobRecord], path: str | Path, catalog: LabelCatalog) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(catalog), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class CorpusSplit:
    train: list[JobRecord]
    dev: list[JobRecord]
    test: list[JobRecord]


def _sample(pool: Sequence[JobRecord], fraction: float, seed_seq: np.random.SeedSequence):
    k = math.floor(fraction * len(pool))
    rng = np.random.Generator(np.random.Philox(seed_seq))
    chosen = set(rng.choice(len(pool), size=k, replace=False).tolist()) if k else set()
    picked = [r for i, r in enumerate(pool) if i in chosen]
    rest = [r for i, r in enumerate(pool) if i not in chosen]
    return picked, rest


def split_corpus(
    train_pool: Sequence[JobRecord],
    test_pool: Sequence[JobRecord],
    dev_fraction: float = 0.1,
    seed: int = 0,
) -> CorpusSplit:
    """Carve the dev set out of both pools, ``floor(fraction * n)`` records from each.

    Each pool gets its own Philox stream spawned from ``seed``; picked and
    remaining records keep their original relative order.
    """
    if not 0.0 < dev_fraction < 1.0:
        raise ValidationError(f"dev_fraction must lie in (0, 1), got {dev_fraction}")
    train_ids = [r.id for r in train_pool]
    test_ids = [r.id for r in test_pool]
    if len(set(train_ids)) != len(train_ids) or len(set(test_ids)) != len(test_ids):
        raise ValidationError("duplicate record ids inside a pool")
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise ValidationError(f"pools share {len(overlap)} record id(s), e.g. {sorted(overlap)[0]!r}")
    seq_train, seq_test = np.random.SeedSequence(seed).spawn(2)
    dev_a, train = _sample(train_pool, dev_fraction, seq_train)
    dev_b, test = _sample(test_pool, dev_fraction, seq_test)
    return CorpusSplit(train=train, dev=dev_a + dev_b, test=test)


@dataclass(frozen=True)
class CorpusStats:
    count: int
    max_char_len: int
    mean_char_len: float
    single_label_count: int
    multi_label_count: int
    max_labels_per_record: int
    label_cardinality_histogram: dict[int, int]
    per_language_counts: dict[str, int]

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["label_cardinality_histogram"] = {str(k): v for k, v in sorted(self.label_cardinality_histogram.items())}
        return d


def compute_stats(records: Sequence[JobRecord]) -> CorpusStats:
    """Length figures count Unicode scalar values of the raw description."""
    if not records:
        raise ValidationError("cannot compute statistics of an empty corpus")
    lengths = [len(r.description) for r in records]
    hist = Counter(len(r.labels) for r in records)
    langs = Counter(r.language or "unknown" for r in records)
    return CorpusStats(
        count=len(records),
        max_char_len=max(lengths),
        mean_char_len=round(sum(lengths) / len(lengths), 2),
        single_label_count=hist.get(1, 0),
        multi_label_count=len(records) - hist.get(1, 0),
        max_labels_per_record=max(hist),
        label_cardinality_histogram=dict(sorted(hist.items())),
        per_language_counts=dict(sorted(langs.items())),
    )
