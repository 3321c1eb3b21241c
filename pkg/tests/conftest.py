"""Shared pytest setup: makes ``oracles`` importable and reports acceptance results."""
import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_results = {}


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the acceptance report line."""
    def record(text):
        request.node.user_properties.append(("detail", text))
    return record


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    failed = report.failed
    if report.when == "call" or failed:
        notes = [v for k, v in report.user_properties if k == "detail"]
        previous = _results.get(number, (True, []))
        _results[number] = (previous[0] and not failed, notes or previous[1])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        ok, notes = _results[number]
        line = f"ACCEPTANCE criterion {number}: {'PASS' if ok else 'FAIL'}"
        if notes:
            line += " | " + "; ".join(notes)
        terminalreporter.write_line(line)
