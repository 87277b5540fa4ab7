import csv
import io as _io
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rollclear.errors import DataError, ParseError
from rollclear.experiments import draw_solvable_case, random_case
from rollclear.grid import validate_case
from rollclear.io import (DISPATCH_HEADER, case_from_dict, case_to_dict, load_case, load_run_config,
                          load_scenarios, load_solution, save_case, save_scenarios, save_solution,
                          write_reports)
from rollclear.pricing import PROPOSED, NO_RAMPING, schedule_for
from rollclear.rolling import RollingConfig, run_rolling_horizon
from rollclear.settlement import settle

GOLDEN = Path(__file__).parent / "golden"


def _rows(text):
    return list(csv.reader(_io.StringIO(text)))


def _same_table(actual: str, expected: str):
    a, e = _rows(actual), _rows(expected)
    assert a[0] == e[0]
    assert len(a) == len(e)
    for ra, re_ in zip(a[1:], e[1:]):
        for x, y in zip(ra, re_):
            try:
                assert float(x) == pytest.approx(float(y), abs=1e-7)
            except ValueError:
                assert x == y


@pytest.mark.parametrize("name", ["one_bus", "two_bus", "eight_zone_synthetic"])
def test_case_round_trip(name, tmp_path):
    case = load_case(f"bundled:{name}")
    save_case(case, tmp_path / "c.json")
    assert load_case(tmp_path / "c.json") == case
    assert case_from_dict(json.loads(json.dumps(case_to_dict(case)))) == case


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_random_case_round_trip_is_exact(seed):
    doc = case_to_dict(random_case(seed))
    assert case_to_dict(case_from_dict(json.loads(json.dumps(doc)))) == doc


def test_malformed_json_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "buses": ["A",\n  ]\n}')
    with pytest.raises(ParseError, match=r"line 3 column 3"):
        load_case(p)


def test_missing_field_reports_path():
    doc = case_to_dict(load_case("bundled:one_bus"))
    del doc["generators"][1]["ramp_up"]
    with pytest.raises(ParseError, match=r"generators\[1\]\.ramp_up"):
        load_case(json.dumps(doc))


def test_wrong_type_reports_path():
    doc = case_to_dict(load_case("bundled:one_bus"))
    doc["loads"][0]["forecast"] = ["a", "b"]
    with pytest.raises(ParseError, match=r"loads\[0\]\.forecast\[0\]"):
        load_case(json.dumps(doc))


def test_unknown_bundled_file():
    with pytest.raises(ParseError, match="no bundled file"):
        load_case("bundled:nope")


def test_scenario_round_trip(two_bus, tmp_path):
    vc, scripted = two_bus
    save_scenarios(scripted.sets, vc, tmp_path / "s.json")
    again = load_scenarios(tmp_path / "s.json", vc)
    assert again.sets.keys() == scripted.sets.keys()
    for k, s in scripted.sets.items():
        t = again.sets[k]
        assert t.window == s.window
        assert [x.id for x in t.trajectories] == [x.id for x in s.trajectories]
        for x, y in zip(t.trajectories, s.trajectories):
            assert x.probability == y.probability
            np.testing.assert_array_equal(x.load_errors, y.load_errors)
            np.testing.assert_array_equal(x.line_status, y.line_status)


def test_run_config_checks(tmp_path):
    cfg = load_run_config("bundled:one_bus_run")
    cfg.check()
    (tmp_path / "r.json").write_text(json.dumps({"case": "missing.json"}))
    with pytest.raises(DataError, match="does not exist"):
        load_run_config(tmp_path / "r.json").check()
    (tmp_path / "r.json").write_text(json.dumps({"case": "bundled:one_bus", "experiment": "monte-carlo"}))
    with pytest.raises(DataError, match="truth"):
        load_run_config(tmp_path / "r.json").check()
    (tmp_path / "r.json").write_text(json.dumps({"case": "bundled:one_bus", "experiment": "loc-sweep"}))
    with pytest.raises(DataError, match="ramping_cases"):
        load_run_config(tmp_path / "r.json").check()


@pytest.mark.parametrize("name", ["one_bus", "two_bus"])
def test_reports_match_golden_files(name, request, tmp_path):
    vc, scripted = request.getfixturevalue(name)
    hr = run_rolling_horizon(vc, scripted)
    reps = {s: settle(hr, s) for s in (PROPOSED, NO_RAMPING)}
    write_reports(tmp_path, hr, reps)
    for gold in sorted((GOLDEN / name).glob("*.csv")):
        _same_table((tmp_path / gold.name).read_text(), gold.read_text())
    assert _rows((tmp_path / "dispatch.csv").read_text())[0] == DISPATCH_HEADER


def test_reports_are_deterministic(one_bus, tmp_path):
    vc, scripted = one_bus
    for sub in ("a", "b"):
        hr = run_rolling_horizon(vc, scripted)
        write_reports(tmp_path / sub, hr, {PROPOSED: settle(hr, PROPOSED)})
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_solution_round_trip_reprices_identically(tmp_path):
    bc = draw_solvable_case(3, keep_solutions=True)
    for sol in bc.horizon.solutions[:3]:
        path = tmp_path / f"w{sol.window[0]}.json"
        save_solution(sol, path)
        back = load_solution(path)
        assert back.window == sol.window and back.objective == sol.objective
        for scheme in (PROPOSED, NO_RAMPING):
            a = schedule_for(sol, scheme, sol.window[0])
            b = schedule_for(back, scheme, sol.window[0])
            assert a.to_csv() == b.to_csv()


def test_stochastic_solution_round_trip(one_bus, tmp_path):
    vc, scripted = one_bus
    hr = run_rolling_horizon(vc, scripted, RollingConfig(keep_solutions=True))
    sol = hr.solutions[0]
    save_solution(sol, tmp_path / "s.json")
    back = load_solution(tmp_path / "s.json")
    assert back.S == sol.S
    assert schedule_for(back, PROPOSED, 0).to_csv() == schedule_for(sol, PROPOSED, 0).to_csv()
