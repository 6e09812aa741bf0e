import pytest

_LINES: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if report.when == "call":
        if hasattr(report, "wasxfail"):
            status = "FAIL (known, see notes)" if report.skipped else "PASS"
        elif report.skipped:
            status = "SKIP"
            detail = detail or (str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else "")
        else:
            status = "PASS" if report.passed else "FAIL"
        _LINES[n] = (status, detail)
    elif report.when == "setup" and report.skipped:
        _LINES[n] = ("SKIP", str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else "")
    elif report.when == "setup" and report.failed:
        _LINES[n] = ("FAIL", "setup error")


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_LINES):
        status, detail = _LINES[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f"  {detail}" if detail else ""))
