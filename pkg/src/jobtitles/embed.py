"""Pretrained word vectors (word2vec text format) and the embedding matrix built from them."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .textpipe import PAD, Vocabulary

log = logging.getLogger(__name__)

OOV_SCALE = 0.25


@dataclass
class PretrainedVectors:
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    source_name: str = ""

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError(f"vector dimension must be positive, got {self.dim}")
        for tok, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValidationError(f"vector for {tok!r} has shape {vec.shape}, expected ({self.dim},)")

    def __len__(self) -> int:
        return len(self.vectors)


def _is_header(fields: list[str]) -> bool:
    return len(fields) == 2 and all(f.isdigit() for f in fields)


def load_vectors(path: str | Path) -> PretrainedVectors:
    """Parse ``token v1 ... vd`` lines, with an optional leading ``count dim`` header.

    Values are parsed as float64 so every component is the exact decimal rounding.
    Repeated tokens keep their first vector.
    """
    path = Path(path)
    dim = None
    declared = None
    vectors: dict[str, np.ndarray] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.rstrip("\r\n").rstrip(" ").split(" ")
            if fields == [""]:
                continue
            if lineno == 1 and _is_header(fields):
                declared, dim = int(fields[0]), int(fields[1])
                if dim == 0:
                    raise ParseError("header declares dimension 0", lineno, str(path))
                continue
            token, values = fields[0], fields[1:]
            if dim is None:
                if not values:
                    raise ParseError("first vector row has no components", lineno, str(path))
                dim = len(values)
            if len(values) != dim:
                raise ParseError(f"row has {len(values)} components, expected {dim}", lineno, str(path))
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise ParseError(f"non-numeric component in row for {token!r}", lineno, str(path)) from None
            if token in vectors:
                log.warning("%s:%d: duplicate token %r ignored", path, lineno, token)
                continue
            vectors[token] = vec
    if dim is None:
        raise ParseError("no vectors found", None, str(path))
    if declared is not None and declared != len(vectors):
        log.warning("%s: header declares %d vectors, read %d", path, declared, len(vectors))
    return PretrainedVectors(dim, vectors, path.name)


def save_vectors(pretrained: PretrainedVectors, path: str | Path, header: bool = True) -> None:
    lines = [f"{len(pretrained)} {pretrained.dim}"] if header else []
    lines += [tok + " " + " ".join(repr(float(x)) for x in vec) for tok, vec in pretrained.vectors.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    trainable: bool = True
    oov_count: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]


def build_embedding_matrix(
    vocab: Vocabulary, pretrained: PretrainedVectors, seed: int = 0, trainable: bool = True
) -> EmbeddingTable:
    """Copy known vectors; every other non-PAD row (UNK included) is U(-0.25, 0.25)."""
    if len(vocab) == 0:
        raise ValidationError("empty vocabulary")
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-OOV_SCALE, OOV_SCALE, size=(len(vocab), pretrained.dim))
    oov = 0
    for i, tok in enumerate(vocab.index_to_token):
        if i == PAD:
            continue
        vec = pretrained.vectors.get(tok)
        if vec is None:
            oov += 1
        else:
            matrix[i] = vec
    matrix[PAD] = 0.0
    return EmbeddingTable(matrix, trainable, oov)
