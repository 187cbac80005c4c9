import time

import pytest

_RESULTS = {}


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = dict(report.user_properties).get("detail", "")
        _RESULTS[number] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")


class Criterion:
    """Records the criterion number and a detail line on the test report."""

    def __init__(self, record_property):
        self._record = record_property
        self.start = time.perf_counter()
        self.notes = []

    def number(self, n):
        self._record("criterion", n)
        self.start = time.perf_counter()

    def note(self, text):
        self.notes.append(text)
        self._record("detail", "; ".join(self.notes))
        print(text)

    def elapsed(self):
        return time.perf_counter() - self.start


@pytest.fixture
def criterion(record_property):
    return Criterion(record_property)
