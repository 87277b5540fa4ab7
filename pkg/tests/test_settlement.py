import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rollclear.cooptimizer import DETERMINISTIC
from rollclear.errors import ConditionNotMet
from rollclear.experiments import draw_solvable_case
from rollclear.grid import GridCase, Line, validate_case
from rollclear.pricing import NO_RAMPING, PROPOSED
from rollclear.rolling import RollingConfig, run_rolling_horizon, simulate_realization
from rollclear.scenario import GeneratedScenarios, realize_day
from rollclear.settlement import (GenParams, GenPrices, apply_perturbation,
                                  bid_perturbation_experiment, cost_recovery_check,
                                  feasibility_violation, iso_surplus, schedule_profit,
                                  self_schedule_profit, settle)

from conftest import gen, load, single_bus


def _params(T, **kw):
    base = dict(cg=10.0, cu=1.0, cd=1.0, gmin=0.0, gmax=6.0, ru_cap=2.0, rd_cap=2.0,
                ramp_up=3.0, ramp_dn=3.0)
    g0 = float(kw.pop("g0", 0.0))
    base.update(kw)
    arr = {k: np.full(T, float(v)) if np.isscalar(v) else np.asarray(v, float)
           for k, v in base.items()}
    return GenParams(**arr, g0=g0)


def test_zero_margin_gives_zero_profit():
    p = _params(3, g0=0.0)
    prices = GenPrices(p.cg.copy(), p.cu.copy(), p.cd.copy())
    best, _ = self_schedule_profit(p, prices)
    assert best == pytest.approx(0.0, abs=1e-9)


def test_single_interval_runs_flat_out():
    p = _params(1, gmax=50.0, ramp_up=1e3, ramp_dn=1e3, ru_cap=0.0, rd_cap=0.0)
    best, (g, _, _) = self_schedule_profit(p, GenPrices(np.array([14.0]), np.zeros(1), np.zeros(1)),
                                           hours=0.5)
    assert g[0] == pytest.approx(50.0)
    assert best == pytest.approx((14.0 - 10.0) * 50.0 * 0.5)


def test_self_schedule_matches_brute_force():
    T = 3
    p = _params(T, g0=2.0)
    prices = GenPrices(np.array([14.0, 6.0, 15.0]), np.array([2.5, 0.5, 3.0]),
                       np.array([0.5, 2.0, 1.5]))
    best, sched = self_schedule_profit(p, prices)
    # exhaustive search over 1 MW steps of (g, rU, rD) in every interval
    per = np.array([(g, u, d) for g in range(7) for u in range(3) for d in range(3)], float)
    idx = np.array(list(itertools.product(range(len(per)), repeat=T)))
    g, u, d = (per[idx][:, :, j] for j in range(3))
    gp = np.hstack([np.full((len(idx), 1), p.g0), g[:, :-1]])
    up = np.hstack([np.zeros((len(idx), 1)), u[:, :-1]])
    dp = np.hstack([np.zeros((len(idx), 1)), d[:, :-1]])
    ok = ((g + u <= p.gmax) & (g - d >= p.gmin) & (g - gp + u + dp <= p.ramp_up)
          & (g - gp - d - up >= -p.ramp_dn)).all(axis=1)
    val = ((prices.pi_g - p.cg) * g + (prices.pi_U - p.cu) * u + (prices.pi_D - p.cd) * d).sum(1)
    oracle = val[ok].max()
    assert best >= oracle - 1e-9
    # the LP optimum of this integral instance lies on the grid
    assert best == pytest.approx(oracle, abs=1e-7)
    assert feasibility_violation(p, *sched) <= 1e-9


def test_one_bus_uplift_and_underpayment(one_bus):
    vc, scripted = one_bus
    hr = run_rolling_horizon(vc, scripted)
    prop, bench = settle(hr, PROPOSED), settle(hr, NO_RAMPING)
    g2 = vc.gen_pos["G2"]
    assert prop.loc.max() <= 1e-6
    assert bench.loc[g2] > 0
    assert prop.gen_credit[g2].sum() - bench.gen_credit[g2].sum() == pytest.approx(37.5, abs=0.01)
    assert bench.loc[g2] == pytest.approx(37.5, abs=0.01)
    assert prop.cost_recovered == [True, True]
    assert bench.cost_recovered[g2] is False


def test_two_bus_underpayment(two_bus):
    vc, scripted = two_bus
    hr = run_rolling_horizon(vc, scripted)
    prop, bench = settle(hr, PROPOSED), settle(hr, NO_RAMPING)
    g2 = vc.gen_pos["G2"]
    assert prop.loc.max() <= 1e-6
    assert prop.gen_credit[g2].sum() - bench.gen_credit[g2].sum() == pytest.approx(12.5, abs=0.01)
    assert bench.profit[g2] == pytest.approx(-12.5, abs=0.01)


def test_zero_dispatch_profit_is_zero():
    p = _params(2)
    prices = GenPrices(np.array([50.0, 1.0]), np.zeros(2), np.zeros(2))
    assert cost_recovery_check(p, (np.zeros(2), np.zeros(2), np.zeros(2)), prices) == 0.0


def test_cost_recovery_needs_zero_minimum():
    p = _params(1, gmin=1.0)
    with pytest.raises(ConditionNotMet):
        cost_recovery_check(p, (np.ones(1), np.zeros(1), np.zeros(1)),
                            GenPrices(np.ones(1), np.zeros(1), np.zeros(1)))


def test_identity_perturbation_changes_nothing(one_bus):
    vc, scripted = one_bus
    res = bid_perturbation_experiment(vc.case, "G2", {}, PROPOSED, scenario_source=scripted)
    assert res.delta == 0.0 and res.feasible


def test_perturbation_scales_fields():
    g = gen("G", "B", 2, c=10.0, ramp=40.0)
    p = apply_perturbation(g, {"cost_energy": 1.2, "ramp_up": 0.8})
    assert p.cost_energy == (12.0, 12.0) and p.ramp_up == (32.0, 32.0)
    assert p.ramp_dn == g.ramp_dn
    with pytest.raises(ValueError):
        apply_perturbation(g, {"bus": 2.0})


@pytest.mark.parametrize("case", ["one_bus", "two_bus"])
def test_ramp_withholding_never_pays_under_proposed(case, request):
    vc, scripted = request.getfixturevalue(case)
    truthful = run_rolling_horizon(vc, scripted)
    for gid in vc.gen_ids:
        res = bid_perturbation_experiment(vc.case, gid, {"ramp_up": 0.8, "ramp_dn": 0.8}, PROPOSED,
                                          scenario_source=scripted, truthful=truthful)
        assert res.delta <= 1e-6


def test_ramp_withholding_pays_under_no_ramping_benchmark():
    bc = draw_solvable_case(24)
    res = bid_perturbation_experiment(bc.vcase.case, "G4", {"ramp_up": 0.8, "ramp_dn": 0.8},
                                      NO_RAMPING, scenario_source=GeneratedScenarios(bc.uncertainty),
                                      truthful=bc.horizon)
    assert res.feasible and res.delta > 1.0
    prop = bid_perturbation_experiment(bc.vcase.case, "G4", {"ramp_up": 0.8, "ramp_dn": 0.8},
                                       PROPOSED, scenario_source=GeneratedScenarios(bc.uncertainty),
                                       truthful=bc.horizon)
    assert prop.delta <= 1e-6


def test_ramp_withholding_pays_under_deterministic_benchmark():
    bc = draw_solvable_case(35)
    vc = bc.vcase
    load_ = vc.dhat.sum(axis=0)
    cfg = RollingConfig(mode=DETERMINISTIC, req_up=0.05 * load_, req_dn=0.05 * load_)
    res = bid_perturbation_experiment(vc.case, "G2", {"ramp_up": 0.8, "ramp_dn": 0.8},
                                      DETERMINISTIC, cfg)
    assert res.feasible and res.delta > 1e-3


def test_uncongested_single_bus_surplus_is_zero():
    vc = single_bus([gen("G1", "B", 2, c=10.0, gmax=60.0), gen("G2", "B", 2, c=20.0)],
                    [load("D", "B", [50.0, 90.0])], 2)
    rep = settle(run_rolling_horizon(vc), PROPOSED)
    assert rep.iso_surplus() == pytest.approx(0.0, abs=1e-9)


def test_congested_surplus_is_congestion_rent():
    case = GridCase(("a", "b"), (Line("L", "a", "b", 1.0, 30.0),),
                    (gen("G1", "a", 1, c=10.0), gen("G2", "b", 1, c=30.0)),
                    (load("D", "b", [50.0]),), 1, 1, 1.0, "a")
    vc = validate_case(case)
    hr = run_rolling_horizon(vc, None, RollingConfig(mode=DETERMINISTIC))
    rep = settle(hr, DETERMINISTIC)
    # 30 MW across a 20 $/MWh price difference
    assert rep.iso_surplus() == pytest.approx(600.0)
    assert iso_surplus(rep) == {"without_redispatch": pytest.approx(600.0)}


@given(st.integers(0, 5000))
@settings(max_examples=15, deadline=None)
def test_accounting_identity_and_corollary(seed):
    bc = draw_solvable_case(seed)
    hr, vc = bc.horizon, bc.vcase
    oc = simulate_realization(hr, realize_day(vc, None, seed=seed))
    for scheme in (PROPOSED, NO_RAMPING):
        rep = settle(hr, scheme, oc)
        credits = rep.gen_credit.sum(axis=0)
        np.testing.assert_allclose(credits + rep.surplus_by_interval(False), rep.load_charge.sum(axis=0),
                                   atol=1e-9 * max(1.0, np.abs(credits).max()))
        assert rep.iso_surplus(True) == pytest.approx(rep.iso_surplus(False) - oc.total_cost)
    rep = settle(hr, PROPOSED)
    scale = max(1.0, float(np.abs(rep.gen_credit).sum()))
    assert rep.loc.max() <= 1e-5 * scale
    for i in range(vc.n_gen):
        if np.all(vc.gmin[i] == 0):
            assert rep.profit[i] >= -1e-6


def test_report_exports(one_bus):
    vc, scripted = one_bus
    rep = settle(run_rolling_horizon(vc, scripted), PROPOSED)
    doc = json.loads(rep.to_json())
    assert doc["scheme"] == PROPOSED
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",")[:3] == ["scheme", "kind", "id"]
    assert len(lines) == 1 + vc.n_gen + vc.n_load
    assert schedule_profit(_params(1), [0.0], [0.0], [0.0],
                           GenPrices(np.ones(1), np.ones(1), np.ones(1))) == 0.0
