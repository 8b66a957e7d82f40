import contextlib
import time

import pytest

_RESULTS: dict[int, str] = {}


class AcceptanceRecorder:
    """Context manager factory that records one PASS/FAIL line per criterion."""

    @contextlib.contextmanager
    def __call__(self, number: int, title: str):
        notes: dict[str, object] = {}
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield notes
            status = "PASS"
        finally:
            detail = ", ".join(f"{k}={v}" for k, v in notes.items())
            elapsed = time.perf_counter() - start
            line = f"[{status}] criterion {number:2d}: {title} ({elapsed:.1f}s){' | ' + detail if detail else ''}"
            _RESULTS[number] = line
            print(line)


@pytest.fixture
def acceptance() -> AcceptanceRecorder:
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[number])
