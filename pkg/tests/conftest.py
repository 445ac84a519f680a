"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config.stash[CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (report.when == "call" or report.failed):
        return
    number, title = mark.args
    results = item.config.stash[CRITERIA]
    ok = report.passed and results.get(number, (title, True, ""))[1]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    results[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[CRITERIA]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
