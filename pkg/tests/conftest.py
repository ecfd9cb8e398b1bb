import numpy as np
import pytest

from residual_landscape.model import Dataset, FeatureMap, Loss


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem(rng):
    X = rng.normal(size=(12, 3))
    y = np.sign(rng.normal(size=12))
    A = rng.normal(size=(4, 3)) * 0.5
    fmap = FeatureMap.one_hidden(A, rng.normal(size=4) * 0.3, activation="tanh")
    return fmap, Dataset(X, y)


def all_losses():
    return [Loss("squared"), Loss("logistic"), Loss("smoothed_hinge", 0.7)]


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion; printed at session end."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
