"""Prints one line per acceptance criterion at the end of the run."""

import re

_DETAILS: dict[str, str] = {}
_OUTCOMES: dict[str, str] = {}
_NAME = re.compile(r"test_acceptance\.py::test_ac(\d+)_")


def record(number: int, detail: str) -> None:
    _DETAILS[f"AC{number}"] = detail


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if m is None:
        return
    key = f"AC{m.group(1)}"
    if report.when == "call" or report.outcome != "passed":
        if report.skipped:
            outcome = "SKIP"
        elif report.passed:
            outcome = "PASS"
        else:
            outcome = "FAIL"
        # a criterion split over several tests passes only if all of them do
        rank = {"SKIP": 0, "PASS": 1, "FAIL": 2}
        outcome = max(_OUTCOMES.get(key, "SKIP"), outcome, key=rank.get)
        _OUTCOMES[key] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_OUTCOMES, key=lambda k: int(k[2:])):
        detail = _DETAILS.get(key, "")
        terminalreporter.write_line(f"{key} {_OUTCOMES[key]}" + (f": {detail}" if detail else ""))
