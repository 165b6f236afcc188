"""Shared pytest hooks.

The acceptance tests record one verdict line per criterion in
CRITERION_LINES; the terminal-summary hook replays them after the run,
outside pytest's output capture, so the full pass/fail ledger is visible
in a plain ``pytest -v`` log.
"""

CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
