"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when != "call" and not report.failed:
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, {"title": title, "failed": [], "passed": [], "details": []})
    (entry["failed"] if report.failed else entry["passed"]).append(item.name)
    entry["details"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        verdict = "FAIL" if entry["failed"] else "PASS"
        detail = "; ".join(dict.fromkeys(entry["details"]))
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {entry['title']}" + (f"  [{detail}]" if detail else ""))
