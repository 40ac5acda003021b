import time

import pytest

_LINES: list[str] = []


class Criterion:
    def __init__(self, number, title, cap=None):
        self.number, self.title, self.cap = number, title, cap
        self.start = time.perf_counter()
        self.line = None

    def check(self, passed: bool, detail: str) -> bool:
        elapsed = time.perf_counter() - self.start
        in_time = self.cap is None or elapsed < self.cap
        cap = f" (cap {self.cap:.0f}s)" if self.cap else ""
        status = "PASS" if passed and in_time else "FAIL"
        note = "" if in_time else " [over runtime cap]"
        self.line = f"{status} criterion {self.number:>2} {self.title}: {detail}; {elapsed:.1f}s{cap}{note}"
        print(self.line)
        _LINES.append(self.line)
        return passed and in_time


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    rec = Criterion(*marker.args, **marker.kwargs)
    yield rec
    if rec.line is None:
        line = f"FAIL criterion {rec.number:>2} {rec.title}: raised before a verdict"
        _LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
