import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def report(number, passed, detail, extra=None):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append((number, line, extra))
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line, _ in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(line)
    for _, _, extra in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        if extra:
            terminalreporter.write_line("")
            terminalreporter.write(extra)
