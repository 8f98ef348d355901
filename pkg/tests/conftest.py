import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def square_pool():
    """Unit-square corners followed by its center."""
    return np.array([[0.0, 1.0, 0.0, 1.0, 0.5],
                     [0.0, 0.0, 1.0, 1.0, 0.5]])


@pytest.fixture
def triangle():
    from dstl.coding import Dictionary
    return Dictionary(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


class BlobTask:
    """Gaussian blobs in M=6 around three class centers, plus an unlabeled pool."""

    def __init__(self, seed=0, n_labeled=500, n_unlabeled=600):
        from dstl.data import LabeledDataset, split
        rng = np.random.default_rng(seed)
        M, C = 6, 3
        centers = rng.normal(size=(M, C)) * 1.5

        def draw(n):
            y = rng.integers(1, C + 1, n)
            return centers[:, y - 1] + rng.normal(size=(M, n)), y

        X, y = draw(n_labeled)
        self.unlabeled, _ = draw(n_unlabeled)
        self.train, self.val, self.test = split(LabeledDataset(X, y, C), 200, 150, seed)


@pytest.fixture(scope="session")
def blobs():
    return BlobTask()
