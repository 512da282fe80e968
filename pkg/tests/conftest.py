"""One PASS/FAIL line per acceptance criterion in the terminal summary."""

import pytest

_outcomes: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown" and report.passed:
        return
    n, title = mark.args
    if report.failed:
        status = "FAIL"
    elif report.skipped:
        status = "SKIP"
    elif report.when == "call":
        status = "PASS"
    else:
        return
    _outcomes[n] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status, title = _outcomes[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
