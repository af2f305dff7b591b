"""Shared acceptance-line reporting.

Acceptance tests record one verdict line per criterion. Lines are printed
immediately (visible under ``pytest -s``) and repeated in a terminal
summary section so they survive output capture.
"""

import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion():
    def record(number, passed, detail):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d} {status}  {detail}"
        _LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
