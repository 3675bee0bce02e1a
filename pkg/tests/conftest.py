import numpy as np
import pytest

from dpauc.data import reference_dataset
from dpauc.metrics import Dataset

# acceptance criteria push (criterion, passed, detail) here
ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def ref_data():
    return reference_dataset()


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def random_dataset(rng, m, pi=0.5, ties=False):
    """Random dataset with at least one sample of each class."""
    labels = (rng.random(m) < pi).astype(np.int8)
    labels[0], labels[1] = 1, 0
    if ties:
        scores = rng.integers(0, 6, size=m) / 5.0
    else:
        scores = rng.random(m)
    return Dataset(scores, labels)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
