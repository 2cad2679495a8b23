import numpy as np
import pytest

from metaspoof.types import ScoreDataset

ACCEPTANCE_LINES: dict[int, str] = {}


def make_dataset(n_g=200, n_i=200, k=2, seed=0, sep=0.6, clients=None):
    """Well-separated Beta scores; client ids cycle over ``clients`` (default one per sample)."""
    rng = np.random.default_rng(seed)
    g = rng.beta(2 + 6 * sep, 2, size=(n_g, k))
    i = rng.beta(2, 2 + 6 * sep, size=(n_i, k))
    scores = np.vstack([g, i])
    genuine = np.r_[np.ones(n_g, bool), np.zeros(n_i, bool)]
    n = n_g + n_i
    if clients is None:
        ids = np.array([f"u{j}" for j in range(n)], dtype=object)
    else:
        ids = np.array([f"u{j % clients}" for j in range(n)], dtype=object)
    return ScoreDataset(scores, genuine, ids)


@pytest.fixture
def small_ds():
    return make_dataset(120, 120, k=2, seed=3, clients=30)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
