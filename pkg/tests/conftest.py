"""Prints the acceptance criteria verdicts at the end of the session."""
from __future__ import annotations

ACCEPTANCE: dict[int, str] = {}


def record(number: int, verdict: str, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {verdict:10s} {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
