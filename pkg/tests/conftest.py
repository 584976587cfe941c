import pytest

# criterion number -> (title, outcomes, notes)
_CRITERIA: dict[int, tuple[str, list[bool], list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.skipped:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, (title, [], []))
        entry[1].append(report.passed)
        entry[2].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes, notes = _CRITERIA[number]
        status = "PASS" if outcomes and all(outcomes) else "FAIL"
        detail = f"  [{', '.join(notes)}]" if notes else ""
        terminalreporter.write_line(f"criterion {number} {status}: {title}{detail}")
