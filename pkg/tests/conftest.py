from pathlib import Path

import numpy as np
import pytest

from bdieval.embeddings import EmbeddingSpace

FIXTURES = Path(__file__).parent / "fixtures"


def random_unit(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def unit_space(matrix, prefix="w", lang=""):
    vocab = [f"{prefix}{i}" for i in range(len(matrix))]
    return EmbeddingSpace(vocab, matrix, lang=lang, norm_state="unit")


def rotated_pair(seed=0, n=300, d=10):
    """A unit source space and its copy rotated by a random orthogonal R (rows y = R x)."""
    rng = np.random.default_rng(seed)
    X = random_unit(rng, n, d).astype(np.float32).astype(np.float64)
    R = random_orthogonal(rng, d)
    src = unit_space(X, "s")
    tgt = unit_space(X @ R.T, "t")
    return src, tgt, R


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
