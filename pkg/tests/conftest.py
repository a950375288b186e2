import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


class AcceptanceRecorder:
    def __init__(self, key):
        self.key = key
        self.details = []

    def note(self, text):
        self.details.append(text)

    def check(self, condition, text):
        self.details.append(("ok: " if condition else "FAILED: ") + text)
        return condition


@pytest.fixture
def acceptance(request):
    key = request.node.get_closest_marker("criterion").args[0]
    rec = AcceptanceRecorder(key)
    yield rec


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key): acceptance criterion identifier")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    rec = item.funcargs.get("acceptance")
    detail = "; ".join(rec.details) if rec is not None else ""
    _ACCEPTANCE[marker.args[0]] = (report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {key}  {detail}")
