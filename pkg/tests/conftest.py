import warnings

import numpy as np
import pytest

from rollclear.errors import SheddingPriceWarning
from rollclear.grid import GridCase, Generator, Line, LoadPoint, validate_case
from rollclear.io import load_case, load_scenarios


def gen(gid, bus, T, c=10.0, cu=1.0, cd=1.0, gmin=0.0, gmax=100.0, ru=50.0, rd=50.0,
        ramp=1e4, g0=0.0):
    rep = lambda v: tuple(np.broadcast_to(np.asarray(v, dtype=float), (T,)).tolist())
    return Generator(gid, bus, rep(c), rep(cu), rep(cd), rep(gmin), rep(gmax), rep(ru), rep(rd),
                     rep(ramp), rep(ramp), float(g0))


def load(lid, bus, forecast, cl=1000.0):
    f = tuple(float(x) for x in np.atleast_1d(forecast))
    return LoadPoint(lid, bus, f, tuple([float(cl)] * len(f)))


def single_bus(gens, loads, T, W=None, hours=1.0):
    return validate_case(GridCase(("B",), (), tuple(gens), tuple(loads), T, W or T, hours, "B"),
                         warn_shedding=False)


@pytest.fixture(scope="session")
def one_bus():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SheddingPriceWarning)
        vc = validate_case(load_case("bundled:one_bus"))
    return vc, load_scenarios("bundled:one_bus_scenarios", vc)


@pytest.fixture(scope="session")
def two_bus():
    vc = validate_case(load_case("bundled:two_bus"), warn_shedding=False)
    return vc, load_scenarios("bundled:two_bus_scenarios", vc)


@pytest.fixture
def three_bus_triangle():
    lines = (Line("L12", "b1", "b2", 1.0, 100.0), Line("L23", "b2", "b3", 1.0, 100.0),
             Line("L13", "b1", "b3", 1.0, 100.0))
    case = GridCase(("b1", "b2", "b3"), lines, (gen("G1", "b1", 1),), (load("D", "b2", [10.0]),),
                    1, 1, 1.0, "b1")
    return validate_case(case, warn_shedding=False)


CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict: ``criterion(n, passed, detail)``."""

    def record(number: int, passed: bool, detail: str = "") -> bool:
        CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
