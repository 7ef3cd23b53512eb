"""Collects acceptance results and prints one PASS/FAIL line per criterion."""

_criteria = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    if report.when == "call" or report.failed:
        passed = report.passed and _criteria.get(key, (True,))[0]
        _criteria[key] = (passed, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria):
        passed, detail = _criteria[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
