import numpy as np
import pytest

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request, capsys):
    """``record(number, title, ok, detail)`` prints one PASS/FAIL line and keeps it
    for the end-of-run summary."""
    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title} -- {detail}"
        request.config.stash.setdefault(_CRITERIA, []).append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
