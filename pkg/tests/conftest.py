from __future__ import annotations

import pytest

_CRITERIA: dict = {}


class CriterionLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, key: str, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {key:<3} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        _CRITERIA[key] = line
        print(line)
        return ok


@pytest.fixture(scope="session")
def criteria() -> CriterionLog:
    return CriterionLog()


def _order(key):
    num = "".join(ch for ch in key if ch.isdigit())
    return int(num or 0), key


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=_order):
        terminalreporter.write_line(_CRITERIA[key])
