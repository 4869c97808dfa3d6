import pytest

from mecsim.model import Catalog, CostParams, Topology


@pytest.fixture
def catalog():
    """Four levels at 0.45/0.55/0.67/0.82 of 2 Mb/s, 600 s long, 10 titles."""
    return Catalog.from_relative(10, 2e6, (0.45, 0.55, 0.67, 0.82), 600.0)


@pytest.fixture
def params(catalog):
    return CostParams.bitrate_equivalent(catalog)


@pytest.fixture
def topo3():
    # d[1][2]=30, d[1][3]=40, d[2][3]=25; origins 150/160/170; locals 5/6/7
    return Topology.build([5, 6, 7], [[0, 30, 40], [30, 0, 25], [40, 25, 0]], [150, 160, 170])


ACCEPTANCE = []  # (criterion number, passed, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
