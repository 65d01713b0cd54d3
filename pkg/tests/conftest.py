"""Collects acceptance pass/fail lines and prints them after the test run."""

ACCEPTANCE_LINES = []


def record_acceptance(number, name, passed):
    ACCEPTANCE_LINES.append(
        "criterion %2d (%s): %s" % (number, name, "PASS" if passed else "FAIL")
    )


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="-")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
