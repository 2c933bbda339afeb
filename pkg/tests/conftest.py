def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS, verdict_lines

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in verdict_lines():
        terminalreporter.write_line(line)
