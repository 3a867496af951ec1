"""Prints the acceptance verdicts at the end of the session."""


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda text: int(text.split()[2])):
            terminalreporter.write_line(line)
