from __future__ import annotations

import logging

import pytest

CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(autouse=True)
def _quiet_lqgame_logs(caplog):
    caplog.set_level(logging.ERROR, logger="lqgame")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
