"""Pretrained word vectors and pooled sentence vectors."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import AnswerSequence, Vocabulary
from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class EmbeddingTable:
    """Vectors indexed by vocabulary id. Rows without a pretrained vector
    are zero and flagged False in `present`. Arrays are read-only."""

    vectors: np.ndarray
    present: np.ndarray
    file_hash: str = ""

    def __post_init__(self):
        self.vectors.setflags(write=False)
        self.present.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def coverage(self) -> float:
        if len(self.present) == 0:
            return 0.0
        return float(self.present.mean())

    def has(self, token_id) -> bool:
        return 0 <= token_id < len(self.present) and bool(self.present[token_id])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_embeddings(path, vocab: Vocabulary) -> EmbeddingTable:
    """Read `token f_1 ... f_d` lines, keeping only vocabulary tokens.

    The dimension comes from the first line and every later line must match.
    When a token repeats, the first occurrence wins.
    """
    dim = None
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                if not values:
                    raise ParseError("embedding line has no values", lineno)
                dim = len(values)
            elif len(values) != dim:
                raise ParseError(f"expected {dim} values, found {len(values)}", lineno)
            idx = vocab.token_to_id.get(token)
            if idx is None or idx in rows:
                continue
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise ParseError("non-numeric embedding value", lineno) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite embedding value", lineno)
            rows[idx] = vec
    if dim is None:
        raise ParseError("embedding file is empty")
    if not rows:
        raise ValidationError("no vocabulary token has a pretrained vector")

    vectors = np.zeros((len(vocab), dim))
    present = np.zeros(len(vocab), dtype=bool)
    for idx, vec in rows.items():
        vectors[idx] = vec
        present[idx] = True
    return EmbeddingTable(vectors, present, file_sha256(path))


def embed_sentence(token_ids, table: EmbeddingTable):
    """Concatenate mean- and max-pooled token vectors (length 2d).

    Tokens without a vector are skipped; returns None when none remain.
    """
    # sorted ids fix the summation order, so token order cannot change a bit
    ids = sorted(i for i in token_ids if table.has(i))
    if not ids:
        return None
    vecs = table.vectors[ids]
    top = vecs.max(axis=0)
    mean = np.minimum(vecs.mean(axis=0), top)  # rounding can push the mean past the max
    return np.concatenate([mean, top])


def encode_sequence(seq: AnswerSequence, table: EmbeddingTable) -> np.ndarray:
    """Stack sentence vectors of a sequence into an (n, 2d) matrix,
    dropping sentences with no embedded token."""
    rows = [v for v in (embed_sentence(s, table) for s in seq.sentences) if v is not None]
    if not rows:
        return np.zeros((0, 2 * table.dim))
    return np.vstack(rows)
