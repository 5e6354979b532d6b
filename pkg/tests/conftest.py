"""Shared test configuration.

Acceptance tests register a one-line verdict per criterion; the terminal
summary prints them all regardless of capture settings, so a plain pytest
run always shows the per-criterion scoreboard.
"""

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} [{name}]: {verdict} - {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
