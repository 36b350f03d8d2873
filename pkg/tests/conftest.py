import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


_CRITERIA: dict[int, tuple[str, str, list[str]]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    number, title = marker
    details = [str(v) for k, v in report.user_properties if k == "detail"]
    failed = report.failed
    prev = _CRITERIA.get(number)
    if prev is not None and prev[0] == "FAIL":
        return
    if report.when == "call" or failed:
        _CRITERIA[number] = ("FAIL" if failed else "PASS", title, details)



@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report._criterion = m.args


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, details = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
