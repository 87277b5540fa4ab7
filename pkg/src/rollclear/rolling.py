"""Rolling-window clearing and ex-post re-dispatch simulation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .cooptimizer import (DETERMINISTIC, STOCHASTIC, PriorBinding, WindowProblem,
                          WindowSolution, build_window_lp, solve_window)
from .errors import SolverError
from .grid import ValidatedCase, compute_ptdf
from .lp import SolveTolerances
from .pricing import NO_RAMPING, PROPOSED, PriceSchedule, kkt_residuals, schedule_for
from .scenario import RealizedPath, ScenarioSet, no_scenarios

logger = logging.getLogger(__name__)

ScenarioSource = Callable[[ValidatedCase, tuple, np.ndarray], ScenarioSet]


@dataclass
class RollingConfig:
    """Options of one rolling run.

    ``req_up``/``req_dn`` are MW per interval (scalar or length ``T``) and
    only used in deterministic mode.
    """

    mode: str = STOCHASTIC
    req_up: object = 0.0
    req_dn: object = 0.0
    schemes: tuple | None = None
    tol: SolveTolerances = field(default_factory=SolveTolerances)
    keep_solutions: bool = False
    check_kkt: bool = True

    def default_schemes(self) -> tuple:
        if self.schemes is not None:
            return tuple(self.schemes)
        return (DETERMINISTIC,) if self.mode == DETERMINISTIC else (PROPOSED, NO_RAMPING)


@dataclass
class WindowRecord:
    window: tuple
    objective: float
    g: np.ndarray
    rU: np.ndarray
    rD: np.ndarray
    kkt: dict
    identities: dict
    n_scenarios: int


@dataclass(eq=False)
class HorizonResult:
    """Binding dispatch (``[n_gen, T]``), binding prices per scheme and window records."""

    vcase: ValidatedCase
    mode: str
    g: np.ndarray
    rU: np.ndarray
    rD: np.ndarray
    prices: dict
    windows: list
    solutions: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.g.shape[1]

    def bid_cost(self) -> np.ndarray:
        """Bid-in clearing cost per interval in money."""
        vc = self.vcase
        per = (vc.cg * self.g + vc.cu * self.rU + vc.cd * self.rD).sum(axis=0)
        return per * vc.hours


def _req(value, T: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (T,)).copy()


def run_rolling_horizon(vcase: ValidatedCase, scenario_source: ScenarioSource | None = None,
                        config: RollingConfig | None = None, observed_status: np.ndarray | None = None,
                        prior: PriorBinding | None = None) -> HorizonResult:
    """Clear every interval with its look-ahead window and chain binding results.

    ``observed_status`` (``[n_line, T]``) is the realized line status; the
    window starting at ``t`` sees the status of ``t - 1`` (all lines in
    service before the first interval).
    """
    config = config or RollingConfig()
    source = scenario_source or no_scenarios
    T, W, G = vcase.T, vcase.W, vcase.n_gen
    req_u, req_d = _req(config.req_up, T), _req(config.req_dn, T)
    prior = prior or PriorBinding.initial(vcase)
    g, rU, rD = np.zeros((G, T)), np.zeros((G, T)), np.zeros((G, T))
    schemes = config.default_schemes()
    parts = {s: [] for s in schemes}
    records, sols = [], []
    status = vcase.all_in_service()
    for t in range(T):
        window = tuple(range(t, min(t + W, T)))
        if observed_status is not None and t > 0:
            status = np.asarray(observed_status[:, t - 1], dtype=bool)
        if config.mode == STOCHASTIC:
            sset = source(vcase, window, status)
            problem = WindowProblem(vcase, window, sset, prior)
        else:
            problem = WindowProblem(vcase, window, None, prior, DETERMINISTIC,
                                    req_u[list(window)], req_d[list(window)])
        try:
            sol = solve_window(build_window_lp(problem), config.tol)
        except SolverError as exc:
            exc.window = window
            raise type(exc)(f"window starting at interval {t + 1}: {exc}",
                            status=exc.status, window=window) from exc
        ident = kkt_residuals(sol) if config.check_kkt else {}
        g[:, t], rU[:, t], rD[:, t] = sol.g[:, 0], sol.rU[:, 0], sol.rD[:, 0]
        for s in schemes:
            parts[s].append(schedule_for(sol, s, t))
        records.append(WindowRecord(window, sol.objective, sol.g.copy(), sol.rU.copy(),
                                    sol.rD.copy(), sol.kkt, ident, sol.S))
        if config.keep_solutions:
            sols.append(sol)
        prior = PriorBinding(sol.g[:, 0].copy(), sol.rU[:, 0].copy(), sol.rD[:, 0].copy())
        logger.debug("interval %d cleared, objective %.4f", t + 1, sol.objective)
    prices = {s: PriceSchedule.concat(p) for s, p in parts.items()}
    return HorizonResult(vcase, config.mode, g, rU, rD, prices, records, sols)


@dataclass
class RedispatchOutcome:
    """Realized deployment per interval (``[n_gen, T]``, ``[n_load, T]``).

    ``spill`` is emergency output reduction beyond procured downward reserve;
    ``cost`` is the pay-as-bid re-adjustment cost per interval in money.
    """

    dU: np.ndarray
    dD: np.ndarray
    dd: np.ndarray
    spill: np.ndarray
    cost: np.ndarray

    @property
    def shed(self) -> np.ndarray:
        return self.dd.sum(axis=0)

    @property
    def total_cost(self) -> float:
        return float(self.cost.sum())


def _redispatch_interval(vcase: ValidatedCase, t: int, g, ru, rd, load, status, tol) -> tuple:
    G, L = vcase.n_gen, vcase.n_load
    sf = compute_ptdf(vcase, status)
    caps = np.where(sf.in_service, vcase.cap_post, 0.0)
    cg, cl = vcase.cg[:, t], vcase.cl[:, t]
    penalty = float(max(cl.max(initial=0.0), cg.max(initial=0.0))) * 2.0 + 1.0
    # columns: dU (G), dD (G), spill (G), dd (L)
    c = np.concatenate([cg, -cg, penalty - cg, cl])
    bounds = ([(0.0, u) for u in ru] + [(0.0, d) for d in rd] + [(0.0, max(x, 0.0)) for x in g]
              + [(0.0, max(x, 0.0)) for x in load])
    a_eq = np.concatenate([np.ones(G), -np.ones(G), -np.ones(G), np.ones(L)])[None, :]
    b_eq = [load.sum() - g.sum()]
    live = np.flatnonzero(sf.in_service & np.any(sf.ptdf != 0, axis=1))
    A = np.hstack([sf.S_G, -sf.S_G, -sf.S_G, sf.S_D])[live]
    base = (sf.S_G @ g - sf.S_D @ load)[live]
    # nonnegative net output per generator
    A_out = np.hstack([-np.eye(G), np.eye(G), np.eye(G), np.zeros((G, L))])
    a_ub = np.vstack([A, -A, A_out])
    b_ub = np.concatenate([caps[live] - base, caps[live] + base, g])
    res = linprog(c, A_ub=sp.csr_matrix(a_ub), b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
                  method=tol.method,
                  options={"primal_feasibility_tolerance": tol.solver_tol,
                           "dual_feasibility_tolerance": tol.solver_tol})
    if res.status != 0:
        raise SolverError(f"re-dispatch at interval {t + 1} failed: {res.message}", status=res.status)
    x = res.x
    dU, dD, spill, dd = x[:G], x[G:2 * G], x[2 * G:3 * G], x[3 * G:]
    cost = float(cg @ (dU - dD - spill) + cl @ dd)
    return dU, dD, dd, spill, cost


def simulate_realization(horizon: HorizonResult, truth: RealizedPath,
                         tol: SolveTolerances | None = None) -> RedispatchOutcome:
    """Deploy procured reserve (and shed if needed) against the realized path."""
    vc = horizon.vcase
    tol = tol or SolveTolerances()
    G, L, T = vc.n_gen, vc.n_load, vc.T
    out = RedispatchOutcome(np.zeros((G, T)), np.zeros((G, T)), np.zeros((L, T)),
                            np.zeros((G, T)), np.zeros(T))
    for t in range(T):
        dU, dD, dd, spill, cost = _redispatch_interval(
            vc, t, horizon.g[:, t], horizon.rU[:, t], horizon.rD[:, t],
            np.asarray(truth.loads[:, t], dtype=float), np.asarray(truth.line_status[:, t], bool), tol)
        out.dU[:, t], out.dD[:, t], out.dd[:, t], out.spill[:, t] = dU, dD, dd, spill
        out.cost[t] = cost * vc.hours
    return out


def total_system_cost(horizon: HorizonResult, outcome: RedispatchOutcome | None = None) -> float:
    """Bid-in clearing cost plus realized re-adjustment cost."""
    total = float(horizon.bid_cost().sum())
    if outcome is not None:
        total += outcome.total_cost
    return total
