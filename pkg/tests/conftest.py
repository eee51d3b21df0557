"""One-line verdict per acceptance check in the terminal summary."""

_outcomes = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup"
                                 and report.outcome != "passed"):
        _outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    words = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for nodeid in sorted(_outcomes):
        name = nodeid.rsplit("::", 1)[-1]
        word = words.get(_outcomes[nodeid], _outcomes[nodeid].upper())
        terminalreporter.write_line(f"{word}  {name}")
