import numpy as np
import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line and assert it.

    Lines are printed together at the end of the session so they survive
    output capturing.
    """
    def check(number, title, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        _CRITERIA.append((number, line))
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA, key=lambda t: t[0]):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
