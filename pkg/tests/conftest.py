import numpy as np
import pytest

from ldprec.data import SparseRatingMatrix, default_movielens_path, load_movielens
from ldprec.domain import RatingDomain


@pytest.fixture(scope="session")
def movielens():
    path = default_movielens_path()
    if path is None:
        pytest.skip("Movielens 100k not found; run scripts/fetch_movielens.py or set LDPREC_MOVIELENS")
    return load_movielens(path)


def low_rank_matrix(m, n, d, seed=0, density=1.0, noise=None):
    """Observed entries of a random rank-``d`` matrix, optionally with additive noise."""
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(m, d))
    V = rng.normal(size=(n, d))
    full = U @ V.T
    mask = rng.random((m, n)) < density
    # every row and column keeps at least one entry
    mask[np.arange(m), rng.integers(0, n, m)] = True
    mask[rng.integers(0, m, n), np.arange(n)] = True
    users, items = np.nonzero(mask)
    values = full[users, items]
    if noise is not None:
        values = values + noise(rng, values.size)
    bound = float(np.abs(values).max()) + 1.0
    R = SparseRatingMatrix(m, n, users, items, values, RatingDomain(-bound, bound))
    return R, U, V


@pytest.fixture
def small_dense():
    R, _, _ = low_rank_matrix(12, 9, 2, seed=3)
    return R


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split("(")[0]), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
