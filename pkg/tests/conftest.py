"""Shared fixtures and the acceptance line reporter.

Acceptance tests append their one-line verdicts to ACCEPTANCE_LINES; the
terminal-summary hook prints them after the run so the lines survive output
capture.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
