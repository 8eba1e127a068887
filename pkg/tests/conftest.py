"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_ACCEPTANCE_RESULTS = []


def pytest_runtest_logreport(report):
    if report.when == "setup" and report.skipped and "test_secondary" in report.nodeid:
        _ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], "skipped"))
        return
    if report.when != "call":
        return
    if "test_acceptance" not in report.nodeid and "test_secondary" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE_RESULTS.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        tag = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"[{tag}] {name}")
