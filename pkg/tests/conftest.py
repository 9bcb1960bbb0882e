import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance checks")
        for line in helpers.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
