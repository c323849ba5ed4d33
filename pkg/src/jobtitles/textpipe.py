"""Text cleaning, whitespace tokenization, vocabulary and fixed-length encoding."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
DEFAULT_MIN_FREQ = 2


def _keep(ch: str) -> bool:
    return ch.isalpha() or ch.isdecimal() or ch == "_"


def clean_text(raw: str) -> str:
    """Lowercase and keep only letters, decimal digits and underscores.

    Everything else becomes a space and runs of spaces collapse. Text is
    NFC-composed first so decomposed Vietnamese diacritics survive as letters.
    """
    text = unicodedata.normalize("NFC", unicodedata.normalize("NFC", raw).lower())
    return " ".join("".join(ch if _keep(ch) else " " for ch in text).split())


def tokenize(cleaned: str) -> list[str]:
    return cleaned.split()


def preprocess(raw: str) -> list[str]:
    return tokenize(clean_text(raw))


@dataclass(frozen=True)
class Vocabulary:
    index_to_token: tuple[str, ...]
    min_freq: int = DEFAULT_MIN_FREQ

    def __post_init__(self):
        if self.index_to_token[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ValidationError("vocabulary must start with the PAD and UNK entries")
        mapping = {t: i for i, t in enumerate(self.index_to_token)}
        if len(mapping) != len(self.index_to_token):
            raise ValidationError("vocabulary has duplicate tokens")
        object.__setattr__(self, "token_to_index", mapping)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def lookup(self, token: str) -> int:
        return self.token_to_index.get(token, UNK)

    def save(self, path: str | Path) -> None:
        lines = [f"#vocab\tmin_freq={self.min_freq}\tsize={len(self)}"]
        lines += [f"{tok}\t{i}" for i, tok in enumerate(self.index_to_token)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("#vocab"):
            raise ParseError("missing '#vocab' header", 1, str(path))
        try:
            header = dict(f.split("=", 1) for f in lines[0].split("\t")[1:])
            min_freq, size = int(header["min_freq"]), int(header["size"])
        except (KeyError, ValueError):
            raise ParseError(f"bad header {lines[0]!r}", 1, str(path)) from None
        tokens = []
        for lineno, line in enumerate(lines[1:], 2):
            tok, sep, idx = line.rpartition("\t")
            if not sep or not idx.isdigit() or int(idx) != len(tokens):
                raise ParseError(f"expected '<token>\\t{len(tokens)}'", lineno, str(path))
            tokens.append(tok)
        if len(tokens) != size:
            raise ParseError(f"header says {size} entries, found {len(tokens)}", None, str(path))
        return cls(tuple(tokens), min_freq)


def build_vocab(corpora: Sequence[Sequence[str]], min_freq: int = DEFAULT_MIN_FREQ) -> Vocabulary:
    """Indices from 2 upward by descending count, ties in lexicographic order."""
    if min_freq < 1:
        raise ValidationError(f"min_freq must be >= 1, got {min_freq}")
    if not corpora:
        raise ValidationError("cannot build a vocabulary from no documents")
    counts = Counter(tok for doc in corpora for tok in doc)
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary((PAD_TOKEN, UNK_TOKEN, *kept), min_freq)


@dataclass(frozen=True)
class EncodedSequence:
    indices: np.ndarray
    true_length: int

    def __len__(self) -> int:
        return len(self.indices)


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> EncodedSequence:
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    head = tokens[:max_len]
    out = np.zeros(max_len, dtype=np.int64)
    out[: len(head)] = [vocab.lookup(t) for t in head]
    return EncodedSequence(out, len(head))


def decode(seq: EncodedSequence, vocab: Vocabulary) -> list[str]:
    return [vocab.index_to_token[i] for i in seq.indices[: seq.true_length]]


def encode_batch(texts: Iterable[str], vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw descriptions -> (indices [N, max_len], true lengths [N])."""
    encoded = [encode(preprocess(t), vocab, max_len) for t in texts]
    if not encoded:
        return np.zeros((0, max_len), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.stack([e.indices for e in encoded]), np.array([e.true_length for e in encoded], dtype=np.int64)
