"""Linear source-to-target maps: orthogonal Procrustes, iterative refinement, RCSLS.

Maps act on column vectors, x -> W x; for a matrix of row vectors this is
``X @ W.T``. All training arithmetic is float64.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from bdieval.embeddings import EmbeddingSpace, unit_rows
from bdieval.errors import BDIError, FormatError
from bdieval.retrieval import (DEFAULT_BLOCK_SIZE, DEFAULT_K_CSLS, csls_penalties, knn_csls,
                               topk_indices)

logger = logging.getLogger(__name__)

TRAINERS = ("procrustes", "procrustes_refined", "rcsls", "external")
DEFAULT_ROUNDS = 5
DEFAULT_REFINE_VOCAB = 20_000
DEFAULT_SAMPLE_SIZE = 10_000
ORTHOGONALITY_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    W: np.ndarray
    orthogonal: bool
    trainer: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64, copy=True)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"alignment matrix must be square, got shape {W.shape}")
        if self.trainer not in TRAINERS:
            raise ValueError(f"unknown trainer {self.trainer!r}")
        if self.orthogonal:
            err = np.abs(W.T @ W - np.eye(len(W))).max()
            if err >= ORTHOGONALITY_TOL:
                raise ValueError(f"matrix flagged orthogonal but |W^T W - I|_max = {err:.3g}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def apply(self, vectors) -> np.ndarray:
        """Map row vectors into the target space."""
        return np.asarray(vectors, dtype=np.float64) @ self.W.T

    def apply_unit(self, vectors) -> np.ndarray:
        """Map row vectors and re-normalize them to unit length."""
        return unit_rows(self.apply(vectors))


@dataclass(frozen=True)
class SeedPairs:
    src: np.ndarray
    tgt: np.ndarray
    n_dropped_oov: int = 0

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.tgt, dtype=np.int64).reshape(-1)
        if src.shape != tgt.shape:
            raise ValueError("source and target index lists differ in length")
        if len(src) == 0:
            raise BDIError("seed dictionary is empty")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "tgt", tgt)

    def __len__(self):
        return len(self.src)

    @classmethod
    def from_word_pairs(cls, pairs, src: EmbeddingSpace, tgt: EmbeddingSpace) -> "SeedPairs":
        """Index pairs for the word pairs whose two words are both in vocabulary."""
        s_idx, t_idx, dropped = [], [], 0
        for s, t in pairs:
            i, j = src.lookup(s), tgt.lookup(t)
            if i is None or j is None:
                dropped += 1
                continue
            s_idx.append(i)
            t_idx.append(j)
        if dropped:
            logger.warning("%d seed pairs dropped as out of vocabulary", dropped)
        return cls(np.array(s_idx, dtype=np.int64), np.array(t_idx, dtype=np.int64), dropped)


def _check_spaces(src, tgt, seeds):
    if src.dim != tgt.dim:
        raise BDIError(f"dimension mismatch: source {src.dim}, target {tgt.dim}")
    if len(seeds) == 0:
        raise BDIError("seed dictionary is empty")
    if seeds.src.min() < 0 or seeds.src.max() >= len(src) or seeds.tgt.min() < 0 \
            or seeds.tgt.max() >= len(tgt):
        raise BDIError("seed index out of range")
    for space in (src, tgt):
        if space.norm_state == "raw":
            logger.warning("aligning a space that is not unit-normalized (%s)", space.lang or "?")


def procrustes_solve(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Orthogonal W minimizing ||X W^T - Y||_F: W = U V^T with U S V^T = svd(Y^T X)."""
    M = np.asarray(Y, dtype=np.float64).T @ np.asarray(X, dtype=np.float64)
    U, _, Vt = np.linalg.svd(M)
    return U @ Vt


def procrustes_fit(src: EmbeddingSpace, tgt: EmbeddingSpace, seeds: SeedPairs) -> AlignmentMap:
    _check_spaces(src, tgt, seeds)
    if len(seeds) < src.dim:
        logger.warning("only %d seed pairs for dimension %d; the map is underdetermined",
                       len(seeds), src.dim)
    W = procrustes_solve(src.matrix[seeds.src], tgt.matrix[seeds.tgt])
    return AlignmentMap(W, orthogonal=True, trainer="procrustes",
                        meta={"seed_pairs": len(seeds), "seed_pairs_dropped_oov": seeds.n_dropped_oov})


def induce_mutual_csls(mapped_src: np.ndarray, tgt: np.ndarray, k_csls: int = DEFAULT_K_CSLS,
                       block_size: int = DEFAULT_BLOCK_SIZE) -> SeedPairs:
    """Pairs (i, j) where j is the CSLS nearest target of i and i the CSLS nearest source of j."""
    pen = csls_penalties(mapped_src, tgt, k_csls, block_size=block_size)
    fwd = np.empty(len(mapped_src), dtype=np.int64)
    for lo in range(0, len(mapped_src), block_size):
        s = 2.0 * (mapped_src[lo:lo + block_size] @ tgt.T) - pen.r_tgt[None, :]
        fwd[lo:lo + block_size] = topk_indices(s, 1)[:, 0]
    bwd = np.empty(len(tgt), dtype=np.int64)
    for lo in range(0, len(tgt), block_size):
        s = 2.0 * (tgt[lo:lo + block_size] @ mapped_src.T) - pen.r_src[None, :]
        bwd[lo:lo + block_size] = topk_indices(s, 1)[:, 0]
    src_idx = np.flatnonzero(bwd[fwd] == np.arange(len(mapped_src)))
    if len(src_idx) == 0:
        raise BDIError("induced dictionary is empty")
    return SeedPairs(src_idx, fwd[src_idx])


def refine(src: EmbeddingSpace, tgt: EmbeddingSpace, seeds: SeedPairs, rounds: int = DEFAULT_ROUNDS,
           *, n_frequent: int = DEFAULT_REFINE_VOCAB, k_csls: int = DEFAULT_K_CSLS,
           sample_size: int = DEFAULT_SAMPLE_SIZE) -> AlignmentMap:
    """Procrustes on the seeds, then ``rounds - 1`` refits on induced mutual-CSLS dictionaries."""
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    current = procrustes_fit(src, tgt, seeds)
    scores = [selection_score(current, src, tgt, sample_size, k_csls=k_csls).score]
    sizes = [len(seeds)]
    src_head = src.matrix[:n_frequent].astype(np.float64)
    tgt_head = tgt.matrix[:n_frequent].astype(np.float64)
    for r in range(2, rounds + 1):
        try:
            induced = induce_mutual_csls(current.apply_unit(src_head), tgt_head, k_csls)
        except BDIError:
            raise BDIError(f"refinement round {r}: induced dictionary is empty") from None
        current = procrustes_fit(src, tgt, induced)
        scores.append(selection_score(current, src, tgt, sample_size, k_csls=k_csls).score)
        sizes.append(len(induced))
    meta = {
        "rounds": rounds,
        "seed_pairs": len(seeds),
        "seed_pairs_dropped_oov": seeds.n_dropped_oov,
        "refine_vocab": n_frequent,
        "k_csls": k_csls,
        "dictionary_sizes": sizes,
        "selection_scores": scores,
    }
    return AlignmentMap(current.W, orthogonal=True, trainer="procrustes_refined", meta=meta)


# --- RCSLS -----------------------------------------------------------------

@dataclass(frozen=True)
class RcslsConfig:
    epochs: int = 10
    lr: float = 1.0
    k: int = 10
    pool: int = 20_000
    max_halvings: int = 30


def _cos_grad(W, A, B, weights=None):
    """Cosines c_p = cos(W a_p, b_p) for paired rows and the gradient of sum_p w_p c_p wrt W."""
    Z = A @ W.T
    nz = np.linalg.norm(Z, axis=1)
    U = Z / nz[:, None]
    c = np.einsum("ij,ij->i", U, B)
    w = np.ones(len(A)) if weights is None else weights
    D = (w / nz)[:, None] * (B - c[:, None] * U)
    return c, D.T @ A


def _neighbors(queries, pool, k, block_size=DEFAULT_BLOCK_SIZE):
    out = np.empty((len(queries), min(k, len(pool))), dtype=np.int64)
    for lo in range(0, len(queries), block_size):
        out[lo:lo + block_size] = topk_indices(queries[lo:lo + block_size] @ pool.T, k)
    return out


def rcsls_objective_and_grad(W, X, Y, src_pool, tgt_pool, k):
    """Relaxed CSLS criterion (to be maximized) and its gradient wrt W.

    J(W) = 1/n sum_i [2 cos(W x_i, y_i) - 1/k sum_{y in N_k(W x_i)} cos(W x_i, y)
                      - 1/k sum_{x in N_k(y_i)} cos(W x, y_i)]

    Neighborhoods are taken in ``tgt_pool`` and in the mapped ``src_pool`` and
    are held fixed when differentiating.
    """
    n = len(X)
    W = np.asarray(W, dtype=np.float64)
    # float32 storage leaves norms off by ~1e-7; cosines need exact unit targets
    Y = unit_rows(Y)
    tgt_pool = unit_rows(tgt_pool)
    Zx = unit_rows(X @ W.T)
    Zp = unit_rows(src_pool @ W.T)
    nn_t = _neighbors(Zx, tgt_pool, k)
    nn_s = _neighbors(Y, Zp, k)
    kt, ks = nn_t.shape[1], nn_s.shape[1]

    c1, g1 = _cos_grad(W, X, Y)
    c2, g2 = _cos_grad(W, np.repeat(X, kt, axis=0), tgt_pool[nn_t.ravel()])
    c3, g3 = _cos_grad(W, src_pool[nn_s.ravel()], np.repeat(Y, ks, axis=0))
    value = (2 * c1.sum() - c2.sum() / kt - c3.sum() / ks) / n
    grad = (2 * g1 - g2 / kt - g3 / ks) / n
    return value, grad


def rcsls_objective(W, X, Y, src_pool, tgt_pool, k):
    return rcsls_objective_and_grad(W, X, Y, src_pool, tgt_pool, k)[0]


def rcsls_fit(src: EmbeddingSpace, tgt: EmbeddingSpace, seeds: SeedPairs,
              config: Optional[RcslsConfig] = None, init: Optional[AlignmentMap] = None) -> AlignmentMap:
    """Full-batch gradient ascent on the relaxed CSLS criterion, from a Procrustes start.

    A step that lowers the objective is retried with half the learning rate;
    after ``max_halvings`` failures the epoch keeps the current map.
    """
    config = config or RcslsConfig()
    if init is None:
        init = procrustes_fit(src, tgt, seeds)
    X = src.matrix[seeds.src].astype(np.float64)
    Y = tgt.matrix[seeds.tgt].astype(np.float64)
    src_pool = src.matrix[:config.pool].astype(np.float64)
    tgt_pool = tgt.matrix[:config.pool].astype(np.float64)

    W = init.W.copy()
    lr = config.lr
    value, grad = rcsls_objective_and_grad(W, X, Y, src_pool, tgt_pool, config.k)
    history = [value]
    for epoch in range(1, config.epochs + 1):
        for _ in range(config.max_halvings + 1):
            candidate = W + lr * grad
            new_value, new_grad = rcsls_objective_and_grad(candidate, X, Y, src_pool, tgt_pool, config.k)
            if not math.isfinite(new_value):
                raise BDIError(f"RCSLS diverged at epoch {epoch} (learning rate {lr:g})")
            if new_value >= value:
                W, value, grad = candidate, new_value, new_grad
                history.append(value)
                break
            lr /= 2
        else:
            logger.info("epoch %d: no improving step found", epoch)
    meta = {
        "epochs": config.epochs,
        "lr": config.lr,
        "final_lr": lr,
        "k": config.k,
        "pool": config.pool,
        "seed_pairs": len(seeds),
        "seed_pairs_dropped_oov": seeds.n_dropped_oov,
        "objective": history,
    }
    return AlignmentMap(W, orthogonal=False, trainer="rcsls", meta=meta)


# --- model selection --------------------------------------------------------

@dataclass(frozen=True)
class SelectionScore:
    score: float
    degenerate: bool
    sample_size: int
    threshold: float

    def __float__(self):
        return self.score


def selection_score(amap: AlignmentMap, src: EmbeddingSpace, tgt: EmbeddingSpace,
                    sample_size: int = DEFAULT_SAMPLE_SIZE, *, threshold: float = 0.0,
                    k_csls: int = DEFAULT_K_CSLS, pool_size: Optional[int] = None) -> SelectionScore:
    """Mean cosine between the most frequent mapped source words and their CSLS top-1 targets."""
    if sample_size > len(src):
        logger.warning("sample_size %d exceeds the source vocabulary; clamped to %d",
                       sample_size, len(src))
        sample_size = len(src)
    queries = amap.apply_unit(src.matrix[:sample_size])
    pool = tgt.matrix[:pool_size].astype(np.float64) if pool_size else tgt.matrix.astype(np.float64)
    table = knn_csls(queries, pool, 1, k_csls)
    best = np.array([row[0] for row in table.indices])
    cos = np.einsum("ij,ij->i", queries, pool[best])
    score = float(cos.mean())
    return SelectionScore(score, score < threshold, sample_size, threshold)


# --- persistence -------------------------------------------------------------

def write_map(amap: AlignmentMap, matrix_stream: TextIO, meta_stream: Optional[TextIO] = None) -> None:
    d = amap.dim
    matrix_stream.write(f"{d} {d}\n")
    for row in amap.W:
        matrix_stream.write(" ".join(repr(float(v)) for v in row) + "\n")
    if meta_stream is not None:
        meta_stream.write(f"trainer={amap.trainer}\n")
        meta_stream.write(f"orthogonal={int(amap.orthogonal)}\n")
        for key in sorted(amap.meta):
            value = amap.meta[key]
            if isinstance(value, (list, tuple)):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            meta_stream.write(f"{key}={value}\n")


def read_map(matrix_stream: TextIO, meta_stream: Optional[TextIO] = None) -> AlignmentMap:
    """Load a persisted map. Without a sidecar the map is treated as external and unconstrained."""
    header = matrix_stream.readline().split()
    if len(header) != 2 or header[0] != header[1] or not header[0].isdigit():
        raise FormatError("map header must be 'd d'", 1)
    d = int(header[0])
    rows = []
    for lineno, line in enumerate(matrix_stream, start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != d:
            raise FormatError(f"expected {d} values, found {len(parts)}", lineno)
        rows.append([float(p) for p in parts])
    if len(rows) != d:
        raise FormatError(f"expected {d} matrix rows, found {len(rows)}")
    meta = {}
    trainer, orthogonal = "external", False
    if meta_stream is not None:
        for line in meta_stream:
            if "=" in line:
                key, value = line.rstrip("\n").split("=", 1)
                meta[key] = value
        trainer = meta.pop("trainer", "external")
        orthogonal = meta.pop("orthogonal", "0") == "1"
    return AlignmentMap(np.array(rows), orthogonal=orthogonal, trainer=trainer, meta=meta)
