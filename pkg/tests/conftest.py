import pytest

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion from the exit list")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _criteria.append((marker.args[0], marker.args[1], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_criteria):
        line = f"[{status}] AC{number:<2} {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
