"""Monolingual embedding spaces in the word2vec/fastText text format.

A space is immutable once built: the matrix is stored as a read-only float32
array and every derived value (normalized copy, mapped vectors) is a new array.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np

from bdieval.errors import BDIError, FormatError

logger = logging.getLogger(__name__)

NORM_STATES = ("raw", "unit", "centered_unit")
DEFAULT_MAX_VOCAB = 200_000


@dataclass(frozen=True, eq=False)
class EmbeddingSpace:
    vocab: tuple
    matrix: np.ndarray
    lang: str = ""
    norm_state: str = "raw"
    n_duplicates: int = 0
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        vocab = tuple(self.vocab)
        matrix = np.array(self.matrix, dtype=np.float32, copy=True)
        if matrix.ndim != 2:
            raise ValueError("embedding matrix must be two-dimensional")
        if matrix.shape[0] != len(vocab):
            raise ValueError(f"{len(vocab)} words but {matrix.shape[0]} matrix rows")
        if matrix.shape[1] <= 0:
            raise ValueError("embedding dimension must be positive")
        if self.norm_state not in NORM_STATES:
            raise ValueError(f"unknown norm_state {self.norm_state!r}")
        index = {}
        for i, word in enumerate(vocab):
            if word in index:
                raise ValueError(f"duplicate vocabulary entry {word!r}")
            index[word] = i
        matrix.setflags(write=False)
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, word):
        return word in self.index

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, word: str) -> Optional[int]:
        return lookup(self, word)

    def head(self, n: Optional[int]) -> "EmbeddingSpace":
        """The ``n`` most frequent words (file order), or self when n is None or large."""
        if n is None or n >= len(self):
            return self
        return EmbeddingSpace(self.vocab[:n], self.matrix[:n], lang=self.lang,
                              norm_state=self.norm_state)


def lookup(space: EmbeddingSpace, word: str) -> Optional[int]:
    """Row index of ``word``, or None when it is out of vocabulary.

    Matching is exact and case-sensitive.
    """
    return space.index.get(word)


def load_embeddings(stream: TextIO, max_vocab: Optional[int] = None, lang: str = "") -> EmbeddingSpace:
    """Read a text vector file: a ``count dim`` header, then ``word v1 ... vdim`` lines.

    Reading stops once ``max_vocab`` distinct words have been kept. Repeated
    words keep their first (most frequent) vector and are counted in
    ``n_duplicates``.
    """
    if max_vocab is not None and max_vocab <= 0:
        raise ValueError("max_vocab must be a positive integer")
    header = stream.readline()
    fields = header.split()
    if len(fields) != 2:
        raise FormatError(f"malformed header {header.strip()!r}, expected '<count> <dim>'", 1)
    try:
        count, dim = int(fields[0]), int(fields[1])
    except ValueError:
        raise FormatError(f"malformed header {header.strip()!r}, expected '<count> <dim>'", 1) from None
    if dim <= 0:
        raise FormatError(f"dimension must be positive, got {dim}", 1)

    words = []
    seen = set()
    rows = []
    n_dup = 0
    for lineno, line in enumerate(stream, start=2):
        if max_vocab is not None and len(words) >= max_vocab:
            break
        parts = line.rstrip("\n").rstrip("\r").split(" ")
        # some writers leave a trailing space before the newline
        if parts and parts[-1] == "":
            parts.pop()
        if len(parts) == 1 and parts[0] == "":
            continue
        if len(parts) != dim + 1:
            raise FormatError(f"expected {dim + 1} fields, found {len(parts)}", lineno)
        word = parts[0]
        if word in seen:
            n_dup += 1
            continue
        try:
            rows.append(np.array(parts[1:], dtype=np.float32))
        except ValueError:
            raise FormatError(f"non-numeric vector component for {word!r}", lineno) from None
        seen.add(word)
        words.append(word)

    if not words:
        raise FormatError("no usable embedding rows")
    if n_dup:
        logger.warning("%d duplicate vocabulary entries ignored (first occurrence kept)", n_dup)
    if max_vocab is None and len(words) + n_dup != count:
        logger.warning("header announces %d rows, file holds %d", count, len(words) + n_dup)
    return EmbeddingSpace(tuple(words), np.vstack(rows), lang=lang, n_duplicates=n_dup)


def format_vector(values: Iterable) -> str:
    """Shortest round-tripping decimal text for float32 components."""
    return " ".join(np.format_float_positional(np.float32(v), unique=True, trim="-")
                    for v in values)


def write_embeddings(space: EmbeddingSpace, stream: TextIO) -> None:
    stream.write(f"{len(space)} {space.dim}\n")
    for word, row in zip(space.vocab, space.matrix):
        stream.write(f"{word} {format_vector(row)}\n")


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Divide every row by its Euclidean norm (float64); zero rows raise."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ZeroDivisionError(int(bad[0]))
    return matrix / norms[:, None]


def normalize(space: EmbeddingSpace, scheme: str = "unit") -> EmbeddingSpace:
    """Length-normalize (``unit``) or mean-center then length-normalize (``centered_unit``)."""
    if scheme not in ("unit", "centered_unit"):
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    if space.norm_state != "raw":
        raise BDIError(f"space is already normalized ({space.norm_state})")
    matrix = space.matrix.astype(np.float64)
    if scheme == "centered_unit":
        matrix = matrix - matrix.mean(axis=0)
    try:
        matrix = unit_rows(matrix)
    except ZeroDivisionError as exc:
        row = exc.args[0]
        raise BDIError(f"zero-norm vector for word {space.vocab[row]!r} (row {row})") from None
    return EmbeddingSpace(space.vocab, matrix, lang=space.lang, norm_state=scheme,
                          n_duplicates=space.n_duplicates)
