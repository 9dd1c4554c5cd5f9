import pytest

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    criterion = dict(report.user_properties).get("criterion")
    if criterion is None:
        return
    ok = report.outcome == "passed"
    prev = _CRITERIA.get(criterion, True)
    _CRITERIA[criterion] = prev and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_CRITERIA):
        verdict = "PASS" if _CRITERIA[criterion] else "FAIL"
        terminalreporter.write_line(f"criterion {criterion}: {verdict}")


@pytest.fixture
def criterion(record_property):
    """Tag a test with the acceptance criterion it checks."""

    def tag(n):
        record_property("criterion", n)

    return tag
