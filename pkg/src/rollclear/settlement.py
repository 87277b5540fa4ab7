"""Settlement, self-scheduling profit, uplift and incentive experiments."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import linprog

from .errors import ConditionNotMet, SolverError
from .grid import GridCase, ValidatedCase, validate_case
from .lp import SolveTolerances
from .pricing import csv_cell
from .rolling import HorizonResult, RedispatchOutcome, RollingConfig, run_rolling_horizon

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GenParams:
    """One generator's operating limits and costs as ``[T]`` arrays."""

    cg: np.ndarray
    cu: np.ndarray
    cd: np.ndarray
    gmin: np.ndarray
    gmax: np.ndarray
    ru_cap: np.ndarray
    rd_cap: np.ndarray
    ramp_up: np.ndarray
    ramp_dn: np.ndarray
    g0: float
    rU0: float = 0.0
    rD0: float = 0.0

    @property
    def T(self) -> int:
        return self.cg.shape[0]


def gen_params(vcase: ValidatedCase, i: int) -> GenParams:
    return GenParams(vcase.cg[i], vcase.cu[i], vcase.cd[i], vcase.gmin[i], vcase.gmax[i],
                     vcase.ru_cap[i], vcase.rd_cap[i], vcase.ramp_up[i], vcase.ramp_dn[i],
                     float(vcase.g0[i]))


@dataclass(frozen=True, eq=False)
class GenPrices:
    pi_g: np.ndarray
    pi_U: np.ndarray
    pi_D: np.ndarray


def prices_of(horizon: HorizonResult, scheme: str, i: int) -> GenPrices:
    ps = horizon.prices[scheme]
    return GenPrices(ps.pi_g[i], ps.pi_U[i], ps.pi_D[i])


def schedule_profit(params: GenParams, g, rU, rD, prices: GenPrices, hours: float = 1.0) -> float:
    """Profit of following ``(g, rU, rD)`` at ``prices`` with the costs in ``params``."""
    g, rU, rD = (np.asarray(x, dtype=float) for x in (g, rU, rD))
    m = ((prices.pi_g - params.cg) * g + (prices.pi_U - params.cu) * rU
         + (prices.pi_D - params.cd) * rD)
    return float(m.sum() * hours)


def feasibility_violation(params: GenParams, g, rU, rD) -> float:
    """Largest violation of the box, reserve-cap and ramping limits."""
    g, rU, rD = (np.asarray(x, dtype=float) for x in (g, rU, rD))
    gp = np.concatenate([[params.g0], g[:-1]])
    up = np.concatenate([[params.rU0], rU[:-1]])
    dp = np.concatenate([[params.rD0], rD[:-1]])
    v = [params.gmin - (g - rD), (g + rU) - params.gmax, -rU, rU - params.ru_cap, -rD,
         rD - params.rd_cap,
         (g - gp + rU + dp) - params.ramp_up,
         -params.ramp_dn - (g - gp - rD - up)]
    return float(max(np.max(x) for x in v))


def self_schedule_profit(params: GenParams, prices: GenPrices, hours: float = 1.0,
                         tol: SolveTolerances | None = None) -> tuple[float, tuple]:
    """Best profit a price-taking generator can earn under its own limits.

    Returns ``(Q*, (g, rU, rD))``.
    """
    tol = tol or SolveTolerances()
    T = params.T
    # columns: g (T), rU (T), rD (T)
    c = -np.concatenate([prices.pi_g - params.cg, prices.pi_U - params.cu,
                         prices.pi_D - params.cd]) * hours
    rows, rhs = [], []

    def row(gc=None, uc=None, dc=None):
        r = np.zeros(3 * T)
        for off, coefs in ((0, gc), (T, uc), (2 * T, dc)):
            if coefs:
                for j, v in coefs.items():
                    r[off + j] = v
        return r

    for t in range(T):
        rows.append(row({t: 1.0}, {t: 1.0}))
        rhs.append(params.gmax[t])
        rows.append(row({t: -1.0}, None, {t: 1.0}))
        rhs.append(-params.gmin[t])
        if t == 0:
            rows.append(row({0: 1.0}, {0: 1.0}))
            rhs.append(params.ramp_up[0] + params.g0 - params.rD0)
            rows.append(row({0: -1.0}, None, {0: 1.0}))
            rhs.append(params.ramp_dn[0] - params.g0 - params.rU0)
        else:
            rows.append(row({t: 1.0, t - 1: -1.0}, {t: 1.0}, {t - 1: 1.0}))
            rhs.append(params.ramp_up[t])
            rows.append(row({t: -1.0, t - 1: 1.0}, {t - 1: 1.0}, {t: 1.0}))
            rhs.append(params.ramp_dn[t])
    bounds = ([(None, None)] * T + [(0.0, u) for u in params.ru_cap]
              + [(0.0, d) for d in params.rd_cap])
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method=tol.method,
                  options={"primal_feasibility_tolerance": tol.solver_tol,
                           "dual_feasibility_tolerance": tol.solver_tol})
    if res.status != 0:
        raise SolverError(f"self-schedule LP failed: {res.message}", status=res.status)
    x = res.x
    return float(-res.fun), (x[:T], x[T:2 * T], x[2 * T:])


def loc_uplift(params: GenParams, dispatch: tuple, prices: GenPrices, hours: float = 1.0,
               tol: SolveTolerances | None = None) -> float:
    """Lost opportunity: best self-schedule profit minus profit of following ``dispatch``."""
    best, _ = self_schedule_profit(params, prices, hours, tol)
    return best - schedule_profit(params, *dispatch, prices, hours)


def cost_recovery_check(params: GenParams, dispatch: tuple, prices: GenPrices,
                        hours: float = 1.0) -> float:
    """Profit of following the dispatch; only defined for zero minimum output."""
    if np.any(params.gmin > 0):
        raise ConditionNotMet("generator has a positive minimum output")
    return schedule_profit(params, *dispatch, prices, hours)


@dataclass
class SettlementReport:
    """Money flows of one horizon under one pricing scheme.

    Per-interval arrays are ``[n_gen, T]`` / ``[n_load, T]``.
    """

    scheme: str
    gen_ids: list
    load_ids: list
    energy_credit: np.ndarray
    reserve_up_credit: np.ndarray
    reserve_dn_credit: np.ndarray
    bid_cost: np.ndarray
    energy_charge: np.ndarray
    fluctuation_charge: np.ndarray
    loc: np.ndarray
    cost_recovered: list
    redispatch_payout: np.ndarray | None = None

    @property
    def gen_credit(self) -> np.ndarray:
        return self.energy_credit + self.reserve_up_credit + self.reserve_dn_credit

    @property
    def profit(self) -> np.ndarray:
        return (self.gen_credit - self.bid_cost).sum(axis=1)

    @property
    def load_charge(self) -> np.ndarray:
        return self.energy_charge + self.fluctuation_charge

    def surplus_by_interval(self, include_redispatch: bool = False) -> np.ndarray:
        s = self.load_charge.sum(axis=0) - self.gen_credit.sum(axis=0)
        if include_redispatch and self.redispatch_payout is not None:
            s = s - self.redispatch_payout
        return s

    def iso_surplus(self, include_redispatch: bool = False) -> float:
        return float(self.surplus_by_interval(include_redispatch).sum())

    def to_dict(self) -> dict:
        gens = []
        for i, gid in enumerate(self.gen_ids):
            gens.append({"id": str(gid),
                         "energy_credit": float(self.energy_credit[i].sum()),
                         "reserve_up_credit": float(self.reserve_up_credit[i].sum()),
                         "reserve_dn_credit": float(self.reserve_dn_credit[i].sum()),
                         "bid_cost": float(self.bid_cost[i].sum()),
                         "profit": float(self.profit[i]),
                         "loc": float(self.loc[i]),
                         "cost_recovered": self.cost_recovered[i]})
        loads = [{"id": str(lid), "energy_charge": float(self.energy_charge[l].sum()),
                  "fluctuation_charge": float(self.fluctuation_charge[l].sum())}
                 for l, lid in enumerate(self.load_ids)]
        out = {"scheme": self.scheme, "generators": gens, "loads": loads,
               "iso_surplus": self.iso_surplus(False)}
        if self.redispatch_payout is not None:
            out["iso_surplus_with_redispatch"] = self.iso_surplus(True)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "kind", "id", "energy", "reserve_up", "reserve_dn", "bid_cost",
                    "profit", "loc", "cost_recovered"])
        for g in self.to_dict()["generators"]:
            w.writerow([self.scheme, "generator", g["id"]]
                       + [csv_cell(float(g[k])) for k in ("energy_credit", "reserve_up_credit",
                                                          "reserve_dn_credit", "bid_cost", "profit",
                                                          "loc")]
                       + [g["cost_recovered"]])
        for l in self.to_dict()["loads"]:
            w.writerow([self.scheme, "load", l["id"], csv_cell(float(l["energy_charge"])), "", "", "", "",
                        "", ""])
        return buf.getvalue()


def settle(horizon: HorizonResult, scheme: str, outcome: RedispatchOutcome | None = None,
           tol: SolveTolerances | None = None, compute_loc: bool = True) -> SettlementReport:
    """Credits, charges, uplift and cost-recovery flags for ``scheme``."""
    vc = horizon.vcase
    h = vc.hours
    ps = horizon.prices[scheme]
    if ps.intervals != tuple(range(vc.T)):
        raise ValueError("price schedule does not cover the horizon")
    ec = ps.pi_g * horizon.g * h
    uc = ps.pi_U * horizon.rU * h
    dc = ps.pi_D * horizon.rD * h
    bid = (vc.cg * horizon.g + vc.cu * horizon.rU + vc.cd * horizon.rD) * h
    charge = ps.pi_d * vc.dhat * h
    fluct = ps.gamma_F * h
    loc = np.zeros(vc.n_gen)
    recovered = []
    for i in range(vc.n_gen):
        p = gen_params(vc, i)
        pr = GenPrices(ps.pi_g[i], ps.pi_U[i], ps.pi_D[i])
        disp = (horizon.g[i], horizon.rU[i], horizon.rD[i])
        if compute_loc:
            loc[i] = loc_uplift(p, disp, pr, h, tol)
        try:
            recovered.append(bool(cost_recovery_check(p, disp, pr, h) >= -1e-6))
        except ConditionNotMet:
            recovered.append(None)
    payout = None
    if outcome is not None:
        payout = outcome.cost.copy()
    return SettlementReport(scheme, vc.gen_ids, vc.load_ids, ec, uc, dc, bid, charge, fluct,
                            loc, recovered, payout)


def iso_surplus(report: SettlementReport) -> dict:
    """Merchandise surplus with and without the realized re-dispatch payout."""
    out = {"without_redispatch": report.iso_surplus(False)}
    if report.redispatch_payout is not None:
        out["with_redispatch"] = report.iso_surplus(True)
    return out


# perturbations map a submitted generator to a misreported one
Perturbation = Callable[[object], object] | Mapping[str, float]

_SCALABLE = ("cost_energy", "cost_res_up", "cost_res_dn", "g_min", "g_max", "res_up_cap",
             "res_dn_cap", "ramp_up", "ramp_dn")


def apply_perturbation(gen, perturbation: Perturbation):
    """Scale fields of a :class:`Generator` by factors, or apply a callable."""
    if callable(perturbation):
        return perturbation(gen)
    changes = {}
    for name, factor in perturbation.items():
        if name not in _SCALABLE:
            raise ValueError(f"cannot perturb field {name!r}")
        changes[name] = tuple(float(v) * float(factor) for v in getattr(gen, name))
    return replace(gen, **changes)


@dataclass
class PerturbationResult:
    gen_id: object
    scheme: str
    truthful_profit: float
    perturbed_profit: float
    feasible: bool
    violation: float
    repriced_profit: float | None = None
    dispatch: tuple = field(default=(), repr=False)

    @property
    def delta(self) -> float:
        return self.perturbed_profit - self.truthful_profit


def bid_perturbation_experiment(case: GridCase, gen_id, perturbation: Perturbation,
                                scheme: str, config: RollingConfig | None = None,
                                scenario_source=None, truthful: HorizonResult | None = None,
                                reprice: bool = False, feas_tol: float = 1e-6) -> PerturbationResult:
    """Profit change from misreporting one generator's bid, at frozen truthful prices.

    The perturbed run's dispatch for ``gen_id`` is valued with its true costs
    and the truthful run's prices.  Dispatch outside the generator's true
    operating region is marked infeasible to follow.
    """
    config = config or RollingConfig()
    vtrue = validate_case(case, warn_shedding=False)
    i = vtrue.gen_pos[gen_id]
    if truthful is None:
        truthful = run_rolling_horizon(vtrue, scenario_source, config)
    params = gen_params(vtrue, i)
    prices = prices_of(truthful, scheme, i)
    h = vtrue.hours
    base = schedule_profit(params, truthful.g[i], truthful.rU[i], truthful.rD[i], prices, h)
    gen = case.generators[i]
    vpert = validate_case(case.replace_generator(apply_perturbation(gen, perturbation)),
                          warn_shedding=False)
    pert = run_rolling_horizon(vpert, scenario_source, config)
    disp = (pert.g[i], pert.rU[i], pert.rD[i])
    viol = feasibility_violation(params, *disp)
    value = schedule_profit(params, *disp, prices, h)
    repriced = None
    if reprice:
        repriced = schedule_profit(params, *disp, prices_of(pert, scheme, i), h)
    return PerturbationResult(gen_id, scheme, base, value, viol <= feas_tol, viol, repriced, disp)
