from __future__ import annotations

import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; printed again in the terminal summary."""

    def _record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"CRITERION {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        _CRITERIA.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
