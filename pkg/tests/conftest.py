import numpy as np
import pytest

from cond2st.core import PairedData, make_rng


@pytest.fixture
def rng():
    return make_rng(12345, 0)


@pytest.fixture
def paired(rng):
    """Small two-population dataset with p = 3."""
    x1 = rng.standard_normal((40, 3))
    x2 = rng.standard_normal((30, 3)) + 0.3
    return PairedData(x1, x1[:, 0] + rng.standard_normal(40), x2, x2[:, 0] + rng.standard_normal(30))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo checks that take more than a few seconds")
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
