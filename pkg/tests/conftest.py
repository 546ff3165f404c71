import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def within_se(hits: int, n: int, p: float, k: float = 3.0) -> bool:
    """Empirical frequency within k binomial standard errors of p."""
    se = np.sqrt(p * (1 - p) / n)
    return abs(hits / n - p) <= k * se + 1e-12
