"""Exact top-k translation retrieval under cosine and CSLS scoring.

Scores are computed in float64 by blocked matrix products. Ties are broken by
ascending target index so results do not depend on block size or thread count.
``naive_knn`` is a deliberately simple full-matrix reference used by the tests.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np

from bdieval.embeddings import EmbeddingSpace
from bdieval.errors import BDIError, FormatError

DEFAULT_K_CSLS = 10
DEFAULT_BLOCK_SIZE = 1024
TSV_COLUMNS = ("source", "rank", "target", "score", "scoring", "k", "k_csls")


@dataclass(frozen=True)
class CslsPenaltyCache:
    """Hubness penalties: mean cosine of each point to its ``k_csls`` nearest neighbors."""

    r_src: np.ndarray
    r_tgt: np.ndarray
    k_csls: int


@dataclass(frozen=True)
class PredictionTable:
    sources: tuple
    targets: tuple
    scores: tuple
    scoring: str
    k: int
    k_csls: Optional[int] = None
    candidate_pool: Optional[int] = None
    # target row indices, when produced by retrieval (absent for tables read from disk)
    indices: Optional[tuple] = None

    def __post_init__(self):
        if self.scoring not in ("cosine", "csls"):
            raise ValueError(f"unknown scoring {self.scoring!r}")
        if len(self.sources) != len(self.targets) or len(self.sources) != len(self.scores):
            raise ValueError("sources, targets and scores must have equal length")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("a source word appears twice in the prediction table")
        object.__setattr__(self, "_by_source", {s: i for i, s in enumerate(self.sources)})

    def __len__(self):
        return len(self.sources)

    def __contains__(self, word):
        return word in self._by_source

    def get(self, word: str) -> Optional[tuple]:
        i = self._by_source.get(word)
        return None if i is None else self.targets[i]

    def check(self, pool: Optional[Sequence[str]] = None) -> None:
        """Assert the ordering invariants; with ``pool``, also pool membership."""
        members = set(pool) if pool is not None else None
        for i, (src, scores) in enumerate(zip(self.sources, self.scores)):
            for a, b in zip(scores, scores[1:]):
                if b > a:
                    raise AssertionError(f"scores increase within the list for {src!r}")
            if self.indices is not None:
                idx = self.indices[i]
                for j in range(len(idx) - 1):
                    if scores[j] == scores[j + 1] and idx[j] > idx[j + 1]:
                        raise AssertionError(f"tie not broken by vocabulary index for {src!r}")
            if members is not None:
                missing = [t for t in self.targets[i] if t not in members]
                if missing:
                    raise AssertionError(f"targets {missing} for {src!r} are not in the pool")


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("BDIEVAL_THREADS", "1")))
    except ValueError:
        return 1


def _unit_matrix(x) -> np.ndarray:
    if isinstance(x, EmbeddingSpace):
        x = x.matrix
    return np.asarray(x, dtype=np.float64)


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the ``k`` largest values, ties by ascending column."""
    n, m = scores.shape
    k = min(k, m)
    out = np.empty((n, k), dtype=np.int64)
    if k == m:
        return np.argsort(-scores, axis=1, kind="stable")
    kth = np.partition(scores, m - k, axis=1)[:, m - k]
    for r in range(n):
        row = scores[r]
        cand = np.flatnonzero(row >= kth[r])
        out[r] = cand[np.argsort(-row[cand], kind="stable")[:k]]
    return out


def _mean_topk(scores: np.ndarray, k: int) -> np.ndarray:
    m = scores.shape[1]
    k = min(k, m)
    top = np.partition(scores, m - k, axis=1)[:, m - k:]
    top.sort(axis=1)
    return top.mean(axis=1)


def _blocks(n, block_size):
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    return [(lo, min(lo + block_size, n)) for lo in range(0, n, block_size)]


def _map_blocks(fn, n, block_size, threads):
    spans = _blocks(n, block_size)
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, spans))
    return [fn(span) for span in spans]


def _mean_neighbor_sim(a, b, k, block_size, threads):
    """For each row of ``a``, the mean of its ``k`` largest cosines against rows of ``b``."""
    if len(a) == 0:
        return np.zeros(0)
    parts = _map_blocks(lambda s: _mean_topk(a[s[0]:s[1]] @ b.T, k), len(a), block_size, threads)
    return np.concatenate(parts)


def csls_penalties(queries, tgt, k_csls: int = DEFAULT_K_CSLS, *, src_pool=None,
                   block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1) -> CslsPenaltyCache:
    """Penalty terms for CSLS.

    ``r_src`` is computed for every query against ``tgt``; ``r_tgt`` for every
    target against ``src_pool`` (mapped source vectors), which defaults to the
    queries themselves.
    """
    if k_csls <= 0:
        raise ValueError("k_csls must be positive")
    q = _unit_matrix(queries)
    t = _unit_matrix(tgt)
    s = q if src_pool is None else _unit_matrix(src_pool)
    if len(t) == 0 or len(s) == 0:
        raise BDIError("empty candidate pool")
    r_src = _mean_neighbor_sim(q, t, k_csls, block_size, threads)
    r_tgt = _mean_neighbor_sim(t, s, k_csls, block_size, threads)
    return CslsPenaltyCache(r_src=r_src, r_tgt=r_tgt, k_csls=k_csls)


def _pool(tgt, pool_size):
    if isinstance(tgt, EmbeddingSpace):
        space = tgt.head(pool_size)
        return space.vocab, _unit_matrix(space.matrix)
    mat = _unit_matrix(tgt)
    if pool_size is not None:
        mat = mat[:pool_size]
    return tuple(str(i) for i in range(len(mat))), mat


def _check_k(k, m):
    if k <= 0:
        raise ValueError("k must be positive")
    if m == 0:
        raise BDIError("empty candidate pool")
    if k > m:
        raise ValueError(f"k={k} exceeds the candidate pool size {m}")


def _assemble(words, pool_words, idx, scores, scoring, k, k_csls):
    return PredictionTable(
        sources=tuple(words),
        targets=tuple(tuple(pool_words[j] for j in row) for row in idx),
        scores=tuple(tuple(float(v) for v in row) for row in scores),
        scoring=scoring, k=k, k_csls=k_csls, candidate_pool=len(pool_words),
        indices=tuple(tuple(int(j) for j in row) for row in idx),
    )


def _query_words(query_words, n):
    if query_words is None:
        return [str(i) for i in range(n)]
    if len(query_words) != n:
        raise ValueError("query_words must align with the query rows")
    return list(query_words)


def knn_cosine(queries, tgt, k: int, *, query_words=None, pool_size: Optional[int] = None,
               block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1) -> PredictionTable:
    """Top-``k`` targets by cosine for each (unit-normalized) query row."""
    q = _unit_matrix(queries)
    pool_words, t = _pool(tgt, pool_size)
    _check_k(k, len(t))
    words = _query_words(query_words, len(q))

    def run(span):
        s = q[span[0]:span[1]] @ t.T
        idx = topk_indices(s, k)
        return idx, np.take_along_axis(s, idx, axis=1)

    parts = _map_blocks(run, len(q), block_size, threads)
    idx = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, k), dtype=np.int64)
    sc = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, k))
    return _assemble(words, pool_words, idx, sc, "cosine", k, None)


def knn_csls(queries, tgt, k: int, k_csls: int = DEFAULT_K_CSLS, *, query_words=None,
             pool_size: Optional[int] = None, src_pool=None, penalties: Optional[CslsPenaltyCache] = None,
             block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1) -> PredictionTable:
    """Top-``k`` targets by CSLS(x, y) = 2 cos(x, y) - r_src(x) - r_tgt(y)."""
    q = _unit_matrix(queries)
    pool_words, t = _pool(tgt, pool_size)
    _check_k(k, len(t))
    words = _query_words(query_words, len(q))
    if penalties is None:
        penalties = csls_penalties(q, t, k_csls, src_pool=src_pool, block_size=block_size,
                                   threads=threads)
    r_src, r_tgt = penalties.r_src, penalties.r_tgt

    def run(span):
        lo, hi = span
        s = 2.0 * (q[lo:hi] @ t.T) - r_src[lo:hi, None] - r_tgt[None, :]
        idx = topk_indices(s, k)
        return idx, np.take_along_axis(s, idx, axis=1)

    parts = _map_blocks(run, len(q), block_size, threads)
    idx = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, k), dtype=np.int64)
    sc = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, k))
    return _assemble(words, pool_words, idx, sc, "csls", k, penalties.k_csls)


def naive_knn(queries, pool, k, scoring="cosine", k_csls=DEFAULT_K_CSLS, src_pool=None):
    """Reference retrieval from the full similarity matrix, sorted row by row.

    Returns ``(indices, scores)`` as lists of lists.
    """
    q = np.asarray(queries, dtype=np.float64)
    t = np.asarray(pool, dtype=np.float64)
    s_pool = q if src_pool is None else np.asarray(src_pool, dtype=np.float64)
    sim = q @ t.T
    if scoring == "csls":
        r_src = [sum(sorted(row, reverse=True)[:k_csls]) / min(k_csls, len(row)) for row in sim]
        back = t @ s_pool.T
        r_tgt = [sum(sorted(row, reverse=True)[:k_csls]) / min(k_csls, len(row)) for row in back]
        sim = np.array([[2 * sim[i, j] - r_src[i] - r_tgt[j] for j in range(len(t))]
                        for i in range(len(q))])
    indices, scores = [], []
    for row in sim:
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))[:k]
        indices.append(order)
        scores.append([float(row[j]) for j in order])
    return indices, scores


def write_predictions(table: PredictionTable, stream: TextIO) -> None:
    writer = csv.writer(stream, delimiter="\t", lineterminator="\n")
    writer.writerow(TSV_COLUMNS)
    k_csls = "" if table.k_csls is None else table.k_csls
    for src, targets, scores in zip(table.sources, table.targets, table.scores):
        for rank, (tgt, score) in enumerate(zip(targets, scores), start=1):
            writer.writerow((src, rank, tgt, repr(float(score)), table.scoring, table.k, k_csls))


def read_predictions(stream: TextIO) -> PredictionTable:
    """Parse the TSV interchange format; rows of one source must be contiguous with ranks 1..n."""
    reader = csv.reader(stream, delimiter="\t")
    header = next(reader, None)
    if header is None or tuple(header) != TSV_COLUMNS:
        raise FormatError(f"prediction table header must be {' '.join(TSV_COLUMNS)}", 1)
    sources, targets, scores = [], [], []
    scoring = k = k_csls = None
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(TSV_COLUMNS):
            raise FormatError(f"expected {len(TSV_COLUMNS)} fields, found {len(row)}", lineno)
        src, rank, tgt, score, row_scoring, row_k, row_kc = row
        try:
            rank, score, row_k = int(rank), float(score), int(row_k)
            row_kc = int(row_kc) if row_kc else None
        except ValueError:
            raise FormatError("non-numeric rank, score or k", lineno) from None
        if scoring is None:
            scoring, k, k_csls = row_scoring, row_k, row_kc
        elif (row_scoring, row_k, row_kc) != (scoring, k, k_csls):
            raise FormatError("scoring, k and k_csls must be constant across the table", lineno)
        if rank == 1:
            if src in sources:
                raise FormatError(f"source {src!r} appears in two separate blocks", lineno)
            sources.append(src)
            targets.append([])
            scores.append([])
        elif not sources or sources[-1] != src or len(targets[-1]) != rank - 1:
            raise FormatError(f"rank {rank} for {src!r} does not continue a ranked list", lineno)
        targets[-1].append(tgt)
        scores[-1].append(score)
    return PredictionTable(
        sources=tuple(sources), targets=tuple(tuple(t) for t in targets),
        scores=tuple(tuple(s) for s in scores), scoring=scoring or "cosine", k=k or 1,
        k_csls=k_csls,
    )
