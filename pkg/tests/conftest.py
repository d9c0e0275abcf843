import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    _CRITERIA[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[k]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
