from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rollclear.cooptimizer import DETERMINISTIC, PriorBinding, WindowProblem, solve_problem
from rollclear.experiments import draw_solvable_case
from rollclear.grid import validate_case
from rollclear.io import load_case
from rollclear.pricing import PROPOSED
from rollclear.settlement import settle
from rollclear.rolling import (RollingConfig, run_rolling_horizon, simulate_realization,
                               total_system_cost)
from rollclear.scenario import (RealizedPath, ScenarioSet, ScriptedScenarios, forecast_path,
                                realize_day)

from conftest import gen, load, single_bus


def test_single_interval_horizon_is_one_shot():
    vc = single_bus([gen("G1", "B", 1, c=10.0, gmax=60.0), gen("G2", "B", 1, c=20.0)],
                    [load("D", "B", [80.0])], 1, W=4)
    hr = run_rolling_horizon(vc)
    assert [w.window for w in hr.windows] == [(0,)]
    sol = solve_problem(WindowProblem(vc, (0,), ScenarioSet((0,)), PriorBinding.initial(vc)))
    np.testing.assert_allclose(hr.g[:, 0], sol.g[:, 0], atol=1e-9)


def test_one_bus_shrinking_windows(one_bus):
    vc, scripted = one_bus
    hr = run_rolling_horizon(vc, scripted, RollingConfig(keep_solutions=True))
    assert [w.window for w in hr.windows] == [(0, 1), (1,)]
    first, second = hr.solutions
    np.testing.assert_array_equal(second.problem.prior.g_prev, first.g[:, 0])
    np.testing.assert_array_equal(second.problem.prior.rU_prev, first.rU[:, 0])
    g2 = vc.gen_pos["G2"]
    assert hr.g[g2].tolist() == pytest.approx([30.0, 60.0], abs=1e-6)
    assert hr.rU[g2, 1] == pytest.approx(30.0, abs=1e-6)


def test_full_window_first_interval_matches_one_shot(two_bus):
    vc, scripted = two_bus
    hr = run_rolling_horizon(vc, scripted)
    one = solve_problem(WindowProblem(vc, (0, 1), scripted.sets[0], PriorBinding.initial(vc)))
    np.testing.assert_allclose(hr.g[:, 0], one.g[:, 0], atol=1e-9)
    np.testing.assert_allclose(hr.rU[:, 0], one.rU[:, 0], atol=1e-9)
    np.testing.assert_allclose(hr.rD[:, 0], one.rD[:, 0], atol=1e-9)


def test_forecast_truth_needs_no_redispatch(two_bus):
    vc, scripted = two_bus
    hr = run_rolling_horizon(vc, scripted)
    oc = simulate_realization(hr, forecast_path(vc))
    for a in (oc.dU, oc.dD, oc.dd, oc.spill, oc.cost):
        assert np.abs(a).max() <= 1e-9
    assert total_system_cost(hr, oc) == pytest.approx(hr.bid_cost().sum())


def test_one_bus_scenario_truth_deploys_reserve(one_bus):
    vc, scripted = one_bus
    hr = run_rolling_horizon(vc, scripted)
    truth = RealizedPath(np.array([[560.0, 690.0]]), np.ones((0, 2), dtype=bool))
    oc = simulate_realization(hr, truth)
    g2 = vc.gen_pos["G2"]
    assert oc.dU[g2, 1] == pytest.approx(30.0)
    assert oc.shed.sum() == pytest.approx(0.0, abs=1e-9)
    # pay-as-bid at G2's 15 $/MWh over a quarter hour
    assert oc.cost[1] == pytest.approx(30.0 * 15.0 * 0.25)


def test_shortfall_is_shed_exactly():
    vc = single_bus([gen("G", "B", 1, c=10.0, gmax=200.0, ru=20.0)], [load("D", "B", [100.0])], 1)
    hr = run_rolling_horizon(vc, None, RollingConfig(mode=DETERMINISTIC, req_up=15.0, req_dn=0.0))
    assert hr.rU[0, 0] == pytest.approx(15.0)
    truth = RealizedPath(np.array([[140.0]]), np.ones((0, 1), dtype=bool))
    oc = simulate_realization(hr, truth)
    assert oc.dU[0, 0] == pytest.approx(15.0)
    assert oc.shed[0] == pytest.approx(140.0 - 100.0 - 15.0)


def test_total_cost_by_hand():
    vc = single_bus([gen("G", "B", 1, c=10.0, cu=2.0, cd=1.0, gmax=200.0)],
                    [load("D", "B", [100.0], cl=500.0)], 1, hours=0.5)
    hr = run_rolling_horizon(vc, None, RollingConfig(mode=DETERMINISTIC, req_up=10.0, req_dn=5.0))
    truth = RealizedPath(np.array([[104.0]]), np.ones((0, 1), dtype=bool))
    oc = simulate_realization(hr, truth)
    bid = (10.0 * 100.0 + 2.0 * 10.0 + 1.0 * 5.0) * 0.5
    assert total_system_cost(hr, oc) == pytest.approx(bid + 10.0 * 4.0 * 0.5)


def test_slack_choice_does_not_move_results(two_bus):
    vc, scripted = two_bus
    other = validate_case(replace(vc.case, slack_bus="B2"), warn_shedding=False)
    alt = ScriptedScenarios({0: scripted.sets[0]})
    a = run_rolling_horizon(vc, scripted)
    b = run_rolling_horizon(other, alt)
    np.testing.assert_allclose(a.g, b.g, atol=1e-8)
    for s in a.prices:
        pa, pb = a.prices[s], b.prices[s]
        for name in ("pi_g", "pi_d", "gamma_F"):
            np.testing.assert_allclose(getattr(pa, name), getattr(pb, name), atol=1e-8)
        # reserve duals are only pinned down where reserve is carried
        np.testing.assert_allclose(pa.pi_U[a.rU > 1e-9], pb.pi_U[a.rU > 1e-9], atol=1e-8)
        np.testing.assert_allclose(pa.pi_D[a.rD > 1e-9], pb.pi_D[a.rD > 1e-9], atol=1e-8)
        np.testing.assert_allclose(settle(a, s).profit, settle(b, s).profit, atol=1e-8)


def test_runs_are_bit_stable(one_bus):
    vc, scripted = one_bus
    a = run_rolling_horizon(vc, scripted)
    b = run_rolling_horizon(vc, scripted)
    assert np.array_equal(a.g, b.g) and np.array_equal(a.rU, b.rU)
    assert np.array_equal(a.prices[PROPOSED].pi_g, b.prices[PROPOSED].pi_g)


@given(st.integers(0, 5000))
@settings(max_examples=20, deadline=None)
def test_binding_chain_respects_ramps(seed):
    bc = draw_solvable_case(seed)
    vc, hr = bc.vcase, bc.horizon
    g_prev, ru_prev, rd_prev = vc.g0, np.zeros(vc.n_gen), np.zeros(vc.n_gen)
    for t in range(vc.T):
        g, ru, rd = hr.g[:, t], hr.rU[:, t], hr.rD[:, t]
        assert np.all(g - g_prev + ru + rd_prev <= vc.ramp_up[:, t] + 1e-7)
        assert np.all(g - g_prev - rd - ru_prev >= -vc.ramp_dn[:, t] - 1e-7)
        g_prev, ru_prev, rd_prev = g, ru, rd


@given(st.integers(0, 5000))
@settings(max_examples=15, deadline=None)
def test_in_sample_truth_sheds_no_more_than_planned(seed):
    bc = draw_solvable_case(seed, keep_solutions=True)
    vc, hr = bc.vcase, bc.horizon
    if not hr.solutions[0].S:
        return
    # truth follows scenario 0 of each window's binding interval
    loads, status = np.zeros_like(vc.dhat), np.ones((vc.n_line, vc.T), dtype=bool)
    planned = np.zeros(vc.T)
    for t, sol in enumerate(hr.solutions):
        if not sol.S:
            return
        traj = sol.problem.scenarios.trajectories[0]
        loads[:, t] = vc.dhat[:, t] + traj.load_errors[:, 0]
        status[:, t] = traj.line_status[:, 0]
        planned[t] = sol.dd[:, 0, 0].sum()
    oc = simulate_realization(hr, RealizedPath(loads, status))
    assert np.all(oc.shed <= planned + 1e-6)


def test_observed_outage_reaches_next_window(two_bus):
    vc, _ = two_bus
    status = np.array([[False, False], [True, True]])
    hr = run_rolling_horizon(vc, None, RollingConfig(keep_solutions=True), observed_status=status)
    assert hr.solutions[0].problem.scenarios.nominal_status is None
    truth = realize_day(vc, None, seed=0)
    assert simulate_realization(hr, truth).cost.shape == (2,)
