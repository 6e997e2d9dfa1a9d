"""Shared pytest wiring: surface the acceptance scoreboard.

The acceptance tests record one pass/fail line per criterion; capture
would swallow plain prints, so the lines are replayed in the terminal
summary where they always show.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
