import pytest

from stampq.data import rng_for

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return rng_for(1234)


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``."""

    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
