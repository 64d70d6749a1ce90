import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.skipped:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        status, detail = "SKIP", reason.removeprefix("Skipped: ")
    elif report.failed:
        status, detail = "FAIL", ""
    elif report.when == "call":
        status, detail = "PASS", ""
    else:
        return
    measured = [str(v) for k, v in item.user_properties if k == "measured"]
    detail = "; ".join(measured + ([detail] if detail else []))
    number, title = mark.args
    _CRITERIA.setdefault(number, (title, []))[1].append((status, detail))


def _summarize(results):
    statuses = {s for s, _ in results}
    if "FAIL" in statuses:
        status = "FAIL"
    elif statuses == {"SKIP"}:
        status = "SKIP"
    elif "SKIP" in statuses:
        status = "PARTIAL"
    else:
        status = "PASS"
    details = list(dict.fromkeys(d for _, d in results if d))
    return status, "; ".join(details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, results = _CRITERIA[number]
        status, detail = _summarize(results)
        line = f"criterion {number} [{status}] {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
