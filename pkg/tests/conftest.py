import sys
import time
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

SUITE_LIMIT = 60.0
_lines = []
_pending = {}
_started = time.perf_counter()


@pytest.fixture
def fig1_path():
    return str(resources.files("pathspin") / "data" / "fig1.apparatus")


@pytest.fixture
def violation_path():
    return str(resources.files("pathspin") / "data" / "violation.apparatus")


@pytest.fixture
def acceptance_log():
    """Record one ``[PASS]``/``[FAIL]`` line per acceptance criterion."""

    def log(number, name, ok, detail, final=True):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}"
        print(line)
        if final:
            _lines.append(line)
        else:
            _pending[number] = (name, ok, detail)
        return ok

    return log


def _suite_time():
    return time.perf_counter() - _started


def pytest_sessionfinish(session, exitstatus):
    if _pending and exitstatus == 0 and session.testscollected > 20 and _suite_time() > SUITE_LIMIT:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not (_lines or _pending):
        return
    terminalreporter.section("acceptance criteria")
    for line in _lines:
        terminalreporter.write_line(line)
    for number, (name, ok, detail) in sorted(_pending.items()):
        elapsed = _suite_time()
        ok = ok and elapsed < SUITE_LIMIT
        terminalreporter.write_line(
            f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}; "
            f"suite runtime {elapsed:.1f} s (limit {SUITE_LIMIT:.0f} s)")
