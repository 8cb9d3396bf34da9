"""Shared pytest wiring: echo acceptance verdict lines after the run."""

from __future__ import annotations

#: pass/fail lines recorded by the acceptance tests (one per criterion)
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
