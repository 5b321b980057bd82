import numpy as np
import pytest

from ratein.data import regression_splits
from ratein.nn import fit, regression_arch


def _sine_net(sigma, seed=123, n=100):
    train, test = regression_splits(n, n, sigma, seed)
    net, history = fit(train.x[:, None], train.y, regression_arch(), epochs=1000, lr=0.01, seed=seed)
    return net, train, test, history


@pytest.fixture(scope="session")
def sine_net():
    """Regression net trained on the noisy sine task (sigma=0.5)."""
    return _sine_net(0.5)


@pytest.fixture(scope="session")
def sine_net_clean():
    """Regression net trained with sigma=0.1."""
    return _sine_net(0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage: ``criterion(3, ok, "detail")``; the line is printed at the end of
    the session and the test fails when ``ok`` is false.
    """

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
