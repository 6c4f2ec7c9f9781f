import os

import pytest

import _report

os.environ.setdefault("NELSON_TFD_THREADS", "1")


def pytest_terminal_summary(terminalreporter):
    rows = _report.lines()
    if rows:
        terminalreporter.section("acceptance criteria")
        for row in rows:
            terminalreporter.write_line(row)


@pytest.fixture
def unit_params():
    from nelson_tfd import PhysicalParams

    return PhysicalParams.from_beta_bar(1.0)
