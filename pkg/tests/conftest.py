"""Shared pytest wiring: acceptance criteria get a PASS/FAIL summary."""

import pytest

_ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        label = marker.args[0]
        _ACCEPTANCE_RESULTS[label] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label in sorted(_ACCEPTANCE_RESULTS, key=_criterion_key):
        terminalreporter.write_line(
            f"criterion {label}: {_ACCEPTANCE_RESULTS[label]}")


def _criterion_key(label: str):
    head = label.split(" ")[0]
    return (int(head) if head.isdigit() else 99, label)


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(label): acceptance criterion covered by this test")
