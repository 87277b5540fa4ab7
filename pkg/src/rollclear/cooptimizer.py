"""Look-ahead energy/reserve co-optimization over one window.

Stochastic mode minimizes bid-in energy and reserve cost plus the
probability-weighted cost of re-dispatch and load shedding across scenario
trajectories.  Deterministic mode replaces the scenarios with system-wide
reserve requirements.

Row and column tags (``k`` is the 0-based position inside the window, ``s``
the scenario position, ``l`` a line position):

==============  ===========================================  ==========
tag             constraint                                   dual
==============  ===========================================  ==========
bal0 k          sum g = sum forecast                         lambda_0
flow0+/- k l    +/- nominal line flow <= rating              phi_0 (+/-)
balS k s        scenario balance after re-dispatch/shedding  lambda_s
flowS+/- k s l  +/- scenario line flow <= post-event rating  phi_s (+/-)
aU i k s        up re-dispatch <= up reserve                 alpha upper
aD i k s        down re-dispatch <= down reserve             beta upper
capU i k        g + rU <= g_max                              upsilon upper
capD i k        g - rD >= g_min                              upsilon lower
rampU i k       up-ramp into position k                      mu upper
rampD i k       down-ramp into position k                    mu lower
reqU/reqD k     sum of reserve = requirement                 chi
==============  ===========================================  ==========

Bounds carry the remaining duals (alpha/beta lower, gamma, rho).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import BuildError, InfeasibleError, SolverError, UnboundedError
from .grid import ValidatedCase, compute_ptdf
from .lp import EQ, GE, LE, LpBuilder, LpStandardForm, SolveTolerances, kkt_report, lp_solve
from .scenario import ScenarioSet

logger = logging.getLogger(__name__)

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"


@dataclass(frozen=True, eq=False)
class PriorBinding:
    """Binding dispatch of the interval preceding a window."""

    g_prev: np.ndarray
    rU_prev: np.ndarray
    rD_prev: np.ndarray

    @classmethod
    def initial(cls, vcase: ValidatedCase, rU0: float = 0.0, rD0: float = 0.0) -> "PriorBinding":
        n = vcase.n_gen
        return cls(np.array(vcase.g0, dtype=float), np.full(n, float(rU0)), np.full(n, float(rD0)))


@dataclass(frozen=True, eq=False)
class WindowProblem:
    vcase: ValidatedCase
    window: tuple
    scenarios: ScenarioSet | None = None
    prior: PriorBinding | None = None
    mode: str = STOCHASTIC
    req_up: np.ndarray | None = None
    req_dn: np.ndarray | None = None
    fixed: dict = field(default_factory=dict)
    forecast: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.window)

    @property
    def S(self) -> int:
        if self.mode != STOCHASTIC or self.scenarios is None:
            return 0
        return len(self.scenarios)

    def demand(self) -> np.ndarray:
        if self.forecast is not None:
            return np.asarray(self.forecast, dtype=float)
        return self.vcase.dhat[:, list(self.window)]


def _check_problem(p: WindowProblem) -> None:
    vc = p.vcase
    w = tuple(p.window)
    if not w:
        raise BuildError("window is empty")
    if len(w) > vc.W:
        raise BuildError(f"window length {len(w)} exceeds window_W={vc.W}")
    if list(w) != list(range(w[0], w[0] + len(w))):
        raise BuildError("window intervals must be consecutive")
    if w[0] < 0 or w[-1] >= vc.T:
        raise BuildError(f"window {w} outside the horizon")
    prior = p.prior
    if prior is not None:
        for name in ("g_prev", "rU_prev", "rD_prev"):
            if np.shape(getattr(prior, name)) != (vc.n_gen,):
                raise BuildError(f"prior {name} must have length {vc.n_gen}")
    if p.forecast is not None and np.shape(p.forecast) != (vc.n_load, len(w)):
        raise BuildError("forecast override has the wrong shape")
    if p.mode == STOCHASTIC:
        if p.scenarios is not None and len(p.scenarios) and tuple(p.scenarios.window) != w:
            raise BuildError(f"scenario window {p.scenarios.window} differs from {w}")
    elif p.mode == DETERMINISTIC:
        for name in ("req_up", "req_dn"):
            val = getattr(p, name)
            if val is not None and np.shape(val) not in ((), (len(w),)):
                raise BuildError(f"{name} must be scalar or have length {len(w)}")
    else:
        raise BuildError(f"unknown mode {p.mode!r}")


def _flow_rows(b: LpBuilder, kind: str, key_prefix: tuple, ptdf_rows: np.ndarray,
               line_idx: np.ndarray, col_blocks, coef_blocks, base_flow: np.ndarray,
               caps: np.ndarray) -> None:
    """Two-sided flow limits ``-cap <= sum coef*x + base <= cap`` for listed lines."""
    if line_idx.size == 0:
        return
    cols = np.concatenate(col_blocks)
    coefs = np.hstack(coef_blocks)[line_idx]  # lines x cols
    nz_r, nz_c = np.nonzero(np.abs(coefs) > 1e-13)
    vals = coefs[nz_r, nz_c]
    base_flow = np.asarray(base_flow)[line_idx]
    keys = [(*key_prefix, int(l)) for l in line_idx]
    b.add_rows(kind + "+", keys, nz_r, cols[nz_c], vals, LE, caps - base_flow)
    b.add_rows(kind + "-", keys, nz_r, cols[nz_c], -vals, LE, caps + base_flow)


def build_window_lp(problem: WindowProblem) -> LpStandardForm:
    """Assemble the window LP for either mode."""
    _check_problem(problem)
    vc = problem.vcase
    w = list(problem.window)
    K, G, L = len(w), vc.n_gen, vc.n_load
    prior = problem.prior or PriorBinding.initial(vc)
    stochastic = problem.mode == STOCHASTIC
    sset = problem.scenarios if stochastic and problem.scenarios is not None else None
    S = len(sset) if sset is not None else 0
    eps = sset.probabilities if S else np.zeros(0)
    dhat = problem.demand()
    fixed = problem.fixed

    cg, cu, cd = vc.cg[:, w], vc.cu[:, w], vc.cd[:, w]
    b = LpBuilder()
    gk = [(i, k) for i in range(G) for k in range(K)]
    cost_g, cost_u, cost_d = cg.ravel().copy(), cu.ravel().copy(), cd.ravel().copy()
    lb_g = np.full(G * K, -np.inf)
    ub_g = np.full(G * K, np.inf)
    lb_u, ub_u = np.zeros(G * K), vc.ru_cap[:, w].ravel().copy()
    lb_d, ub_d = np.zeros(G * K), vc.rd_cap[:, w].ravel().copy()
    for (i, k), (gv, uv, dv) in fixed.items():
        j = i * K + k
        cost_g[j] = cost_u[j] = cost_d[j] = 0.0
        lb_g[j] = ub_g[j] = gv
        lb_u[j] = ub_u[j] = uv
        lb_d[j] = ub_d[j] = dv
    gi = b.add_vars("g", gk, lb_g, ub_g, cost_g).reshape(G, K)
    ui = b.add_vars("rU", gk, lb_u, ub_u, cost_u).reshape(G, K)
    di = b.add_vars("rD", gk, lb_d, ub_d, cost_d).reshape(G, K)

    if S:
        gks = [(i, k, s) for i in range(G) for k in range(K) for s in range(S)]
        lks = [(l, k, s) for l in range(L) for k in range(K) for s in range(S)]
        re_cost = (cg[:, :, None] * eps[None, None, :]).ravel()
        dUi = b.add_vars("dU", gks, 0.0, np.inf, re_cost).reshape(G, K, S)
        dDi = b.add_vars("dD", gks, 0.0, np.inf, -re_cost).reshape(G, K, S)
        errs = np.stack([s.load_errors for s in sset.trajectories], axis=2)  # L,K,S
        post = dhat[:, :, None] + errs
        if np.any(post < -1e-9):
            raise BuildError("scenario demand is negative")
        shed_cost = (vc.cl[:, w][:, :, None] * eps[None, None, :]).ravel()
        ddi = b.add_vars("dd", lks, 0.0, np.maximum(post, 0.0).ravel(), shed_cost).reshape(L, K, S)

    nominal_status = None
    if sset is not None and sset.nominal_status is not None:
        nominal_status = sset.nominal_status
    sf0 = compute_ptdf(vc, nominal_status)
    caps0 = np.where(sf0.in_service, vc.cap_f, 0.0)
    live0 = np.flatnonzero(sf0.in_service & np.any(sf0.ptdf != 0, axis=1))
    ptdfS = {}

    for k in range(K):
        b.add_rows("bal0", [(k,)], np.zeros(G, int), gi[:, k], np.ones(G), EQ, dhat[:, k].sum())
        _flow_rows(b, "flow0", (k,), sf0.ptdf, live0, [gi[:, k]], [sf0.S_G],
                   sf0.S_D @ dhat[:, k] * -1.0, caps0[live0])
        for s in range(S):
            traj = sset.trajectories[s]
            sfs = compute_ptdf(vc, traj.line_status[:, k])
            ptdfS[(k, s)] = sfs.ptdf
            capsS = np.where(sfs.in_service, vc.cap_post, 0.0)
            cols = np.concatenate([gi[:, k], dUi[:, k, s], dDi[:, k, s], ddi[:, k, s]])
            vals = np.concatenate([np.ones(G), np.ones(G), -np.ones(G), np.ones(L)])
            b.add_rows("balS", [(k, s)], np.zeros(cols.size, int), cols, vals, EQ,
                       post[:, k, s].sum())
            liveS = np.flatnonzero(sfs.in_service & np.any(sfs.ptdf != 0, axis=1))
            _flow_rows(b, "flowS", (k, s), sfs.ptdf, liveS,
                       [gi[:, k], dUi[:, k, s], dDi[:, k, s], ddi[:, k, s]],
                       [sfs.S_G, sfs.S_G, -sfs.S_G, sfs.S_D],
                       -(sfs.S_D @ post[:, k, s]), capsS[liveS])

    if S:
        keys = [(i, k, s) for i in range(G) for k in range(K) for s in range(S)]
        n = len(keys)
        r = np.repeat(np.arange(n), 2)
        ru_rep = np.repeat(ui[:, :, None], S, axis=2).ravel()
        rd_rep = np.repeat(di[:, :, None], S, axis=2).ravel()
        b.add_rows("aU", keys, r, np.column_stack([dUi.ravel(), ru_rep]).ravel(),
                   np.tile([1.0, -1.0], n), LE, 0.0)
        b.add_rows("aD", keys, r, np.column_stack([dDi.ravel(), rd_rep]).ravel(),
                   np.tile([1.0, -1.0], n), LE, 0.0)

    cap_keys = [(i, k) for i in range(G) for k in range(K) if (i, k) not in fixed]
    if cap_keys:
        n = len(cap_keys)
        gcol = np.array([gi[i, k] for i, k in cap_keys])
        ucol = np.array([ui[i, k] for i, k in cap_keys])
        dcol = np.array([di[i, k] for i, k in cap_keys])
        r = np.repeat(np.arange(n), 2)
        b.add_rows("capU", cap_keys, r, np.column_stack([gcol, ucol]).ravel(),
                   np.tile([1.0, 1.0], n), LE, np.array([vc.gmax[i, w[k]] for i, k in cap_keys]))
        b.add_rows("capD", cap_keys, r, np.column_stack([gcol, dcol]).ravel(),
                   np.tile([1.0, -1.0], n), GE, np.array([vc.gmin[i, w[k]] for i, k in cap_keys]))

    # ramping: position 0 references the prior binding interval
    keys = gk
    rows_u, cols_u, vals_u, rhs_u = [], [], [], []
    rows_d, cols_d, vals_d, rhs_d = [], [], [], []
    for r_i, (i, k) in enumerate(keys):
        t = w[k]
        if k == 0:
            rows_u += [r_i, r_i]
            cols_u += [gi[i, 0], ui[i, 0]]
            vals_u += [1.0, 1.0]
            rhs_u.append(vc.ramp_up[i, t] + prior.g_prev[i] - prior.rD_prev[i])
            rows_d += [r_i, r_i]
            cols_d += [gi[i, 0], di[i, 0]]
            vals_d += [1.0, -1.0]
            rhs_d.append(-vc.ramp_dn[i, t] + prior.g_prev[i] + prior.rU_prev[i])
        else:
            rows_u += [r_i] * 4
            cols_u += [gi[i, k], gi[i, k - 1], ui[i, k], di[i, k - 1]]
            vals_u += [1.0, -1.0, 1.0, 1.0]
            rhs_u.append(vc.ramp_up[i, t])
            rows_d += [r_i] * 4
            cols_d += [gi[i, k], gi[i, k - 1], di[i, k], ui[i, k - 1]]
            vals_d += [1.0, -1.0, -1.0, -1.0]
            rhs_d.append(-vc.ramp_dn[i, t])
    b.add_rows("rampU", keys, rows_u, cols_u, vals_u, LE, rhs_u)
    b.add_rows("rampD", keys, rows_d, cols_d, vals_d, GE, rhs_d)

    if not stochastic:
        req_u = np.broadcast_to(np.asarray(0.0 if problem.req_up is None else problem.req_up,
                                           dtype=float), (K,))
        req_d = np.broadcast_to(np.asarray(0.0 if problem.req_dn is None else problem.req_dn,
                                           dtype=float), (K,))
        for k in range(K):
            b.add_rows("reqU", [(k,)], np.zeros(G, int), ui[:, k], np.ones(G), EQ, req_u[k])
            b.add_rows("reqD", [(k,)], np.zeros(G, int), di[:, k], np.ones(G), EQ, req_d[k])

    lp = b.build()
    lp.meta.update(problem=problem, ptdf0=sf0.ptdf, ptdfS=ptdfS, S=S, K=K,
                   index={"g": gi, "rU": ui, "rD": di,
                          **({"dU": dUi, "dD": dDi, "dd": ddi} if S else {})})
    return lp


@dataclass(eq=False)
class WindowSolution:
    """Primal and dual optimum of one window LP.

    Generator arrays are ``(n_gen, K)`` or ``(n_gen, K, S)``; ``mu_up[:, k]``
    and ``mu_lo[:, k]`` are the multipliers of the ramping limits *into*
    window position ``k`` (position 0 ramps from the prior binding).
    ``phi0``/``phiS`` hold net line multipliers (upper minus lower limit).
    """

    problem: WindowProblem
    objective: float
    g: np.ndarray
    rU: np.ndarray
    rD: np.ndarray
    dU: np.ndarray
    dD: np.ndarray
    dd: np.ndarray
    lam0: np.ndarray
    phi0: np.ndarray
    lamS: np.ndarray
    phiS: np.ndarray
    alpha_up: np.ndarray
    alpha_lo: np.ndarray
    beta_up: np.ndarray
    beta_lo: np.ndarray
    gamma_up: np.ndarray
    gamma_lo: np.ndarray
    ups_up: np.ndarray
    ups_lo: np.ndarray
    rhoU_up: np.ndarray
    rhoU_lo: np.ndarray
    rhoD_up: np.ndarray
    rhoD_lo: np.ndarray
    mu_up: np.ndarray
    mu_lo: np.ndarray
    chiU: np.ndarray
    chiD: np.ndarray
    ptdf0: np.ndarray
    ptdfS: dict
    kkt: dict = field(default_factory=dict)
    present: frozenset = frozenset()

    @property
    def window(self) -> tuple:
        return tuple(self.problem.window)

    @property
    def mode(self) -> str:
        return self.problem.mode

    @property
    def K(self) -> int:
        return len(self.problem.window)

    @property
    def S(self) -> int:
        return self.dU.shape[2]

    @property
    def probabilities(self) -> np.ndarray:
        if self.S == 0:
            return np.zeros(0)
        return self.problem.scenarios.probabilities

    def omega0(self) -> np.ndarray:
        """Nominal energy-plus-congestion component per (position, bus)."""
        return self.lam0[:, None] - self.phi0 @ self.ptdf0

    def omegaS(self) -> np.ndarray:
        """Scenario components per (position, scenario, bus)."""
        K, S = self.K, self.S
        out = np.zeros((K, S, self.ptdf0.shape[1]))
        for k in range(K):
            for s in range(S):
                out[k, s] = self.lamS[k, s] - self.phiS[k, s] @ self.ptdfS[(k, s)]
        return out


def solve_window(lp: LpStandardForm, tol: SolveTolerances | None = None) -> WindowSolution:
    """Solve a window LP and map primal and dual values back to model entities."""
    tol = tol or SolveTolerances()
    problem: WindowProblem = lp.meta["problem"]
    res = lp_solve(lp, tol)
    if res.status == "infeasible":
        raise InfeasibleError(f"window {tuple(t + 1 for t in problem.window)} is infeasible",
                              status=res.status, window=problem.window)
    if res.status == "unbounded":
        raise UnboundedError("window LP is unbounded; check for negative cost data",
                             status=res.status, window=problem.window)
    vc = problem.vcase
    G, L, K, S = vc.n_gen, vc.n_load, lp.meta["K"], lp.meta["S"]
    nl = vc.n_line
    x, y = res.x, res.row_dual

    # bucket rows/cols once
    rows: dict = {}
    for pos, tag in enumerate(lp.row_tags):
        rows.setdefault(tag[0], []).append((tag[1:], pos))
    cols: dict = {}
    for pos, tag in enumerate(lp.col_tags):
        cols.setdefault(tag[0], []).append((tag[1:], pos))

    def from_rows(kind, shape):
        out = np.zeros(shape)
        for key, pos in rows.get(kind, ()):
            out[key] = y[pos]
        return out

    def from_cols(kind, shape, vec):
        out = np.zeros(shape)
        for key, pos in cols.get(kind, ()):
            out[key] = vec[pos]
        return out

    gks, lks = (G, K, S), (L, K, S)
    sol = WindowSolution(
        problem=problem,
        objective=res.objective,
        g=from_cols("g", (G, K), x),
        rU=from_cols("rU", (G, K), x),
        rD=from_cols("rD", (G, K), x),
        dU=from_cols("dU", gks, x),
        dD=from_cols("dD", gks, x),
        dd=from_cols("dd", lks, x),
        lam0=from_rows("bal0", (K,)),
        phi0=from_rows("flow0+", (K, nl)) - from_rows("flow0-", (K, nl)),
        lamS=from_rows("balS", (K, S)),
        phiS=from_rows("flowS+", (K, S, nl)) - from_rows("flowS-", (K, S, nl)),
        alpha_up=from_rows("aU", gks),
        alpha_lo=from_cols("dU", gks, res.lower_dual),
        beta_up=from_rows("aD", gks),
        beta_lo=from_cols("dD", gks, res.lower_dual),
        gamma_up=from_cols("dd", lks, res.upper_dual),
        gamma_lo=from_cols("dd", lks, res.lower_dual),
        ups_up=from_rows("capU", (G, K)),
        ups_lo=from_rows("capD", (G, K)),
        rhoU_up=from_cols("rU", (G, K), res.upper_dual),
        rhoU_lo=from_cols("rU", (G, K), res.lower_dual),
        rhoD_up=from_cols("rD", (G, K), res.upper_dual),
        rhoD_lo=from_cols("rD", (G, K), res.lower_dual),
        mu_up=from_rows("rampU", (G, K)),
        mu_lo=from_rows("rampD", (G, K)),
        chiU=from_rows("reqU", (K,)),
        chiD=from_rows("reqD", (K,)),
        ptdf0=lp.meta["ptdf0"],
        ptdfS=lp.meta["ptdfS"],
        present=frozenset(rows) | frozenset(cols),
    )
    sol.kkt = kkt_report(lp, res)
    if sol.kkt["primal"] > tol.feas_tol * max(1.0, np.abs(lp.rhs).max(initial=0.0)):
        raise SolverError(f"primal residual {sol.kkt['primal']:.3g} exceeds tolerance",
                          window=problem.window)
    if sol.kkt["complementarity"] > tol.comp_tol * max(1.0, np.abs(lp.c).max(initial=0.0)):
        logger.warning("complementarity residual %.3g above tolerance in window %s",
                       sol.kkt["complementarity"], problem.window)
    return sol


def solve_problem(problem: WindowProblem, tol: SolveTolerances | None = None) -> WindowSolution:
    return solve_window(build_window_lp(problem), tol)
