"""Shared test plumbing: collect acceptance-gate verdict lines and echo
them in the terminal summary, where capture cannot hide them."""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
