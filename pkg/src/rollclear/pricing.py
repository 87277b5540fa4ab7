"""Marginal prices derived from window duals.

Three schemes are supported:

``proposed``
    energy and reserve prices carry the ramping multipliers of both
    transitions adjacent to the priced interval, making them
    generator-specific.
``no_ramping``
    the same formulas with every ramping multiplier dropped (a
    single-interval scenario-wise comparator).
``deterministic``
    prices of the reserve-requirement model: nodal energy price plus
    uniform reserve prices from the requirement equalities.

For an interval at window position ``k`` the multiplier of the transition
into the interval is read at ``k`` and the one out of it at ``k + 1`` (zero
beyond the window end).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cooptimizer import DETERMINISTIC, WindowProblem, WindowSolution, build_window_lp, solve_window
from .errors import AssumptionViolated, DegeneracyWarning, MissingDualError, SolverError
from .lp import SolveTolerances

logger = logging.getLogger(__name__)

PROPOSED = "proposed"
NO_RAMPING = "no_ramping"
SCHEMES = (PROPOSED, NO_RAMPING, DETERMINISTIC)

GEN_COMPONENTS = ("omega0", "omegaS", "dmu_t", "dmu_prev", "alpha_sum", "beta_sum",
                  "mu_up_prev", "mu_lo_t", "mu_lo_prev", "mu_up_t")
LOAD_COMPONENTS = ("omega0", "omegaS", "gamma_sum")


def csv_cell(value):
    """Shortest round-tripping text for floats, with negative zero written as 0.0."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value) + 0.0)
    return value


def _position(sol: WindowSolution, t: int) -> int:
    w = sol.window
    if t not in w:
        raise ValueError(f"interval {t + 1} is outside window {tuple(x + 1 for x in w)}")
    return w.index(t)


def _require(sol: WindowSolution, *kinds: str) -> None:
    for kind in kinds:
        if kind not in sol.present:
            raise MissingDualError(f"solution has no {kind!r} rows")


def gen_components(sol: WindowSolution, i: int, t: int) -> dict:
    """Dual pieces entering generator ``i``'s prices at interval ``t``."""
    _require(sol, "bal0", "rampU", "rampD")
    k = _position(sol, t)
    bus = sol.problem.vcase.gen_bus[i]
    nxt = k + 1 < sol.K
    mu_up_t = sol.mu_up[i, k + 1] if nxt else 0.0
    mu_lo_t = sol.mu_lo[i, k + 1] if nxt else 0.0
    return {
        "omega0": float(sol.omega0()[k, bus]),
        "omegaS": float(sol.omegaS()[k, :, bus].sum()) if sol.S else 0.0,
        "dmu_t": float(mu_up_t - mu_lo_t),
        "dmu_prev": float(sol.mu_up[i, k] - sol.mu_lo[i, k]),
        "alpha_sum": float(sol.alpha_up[i, k].sum()),
        "beta_sum": float(sol.beta_up[i, k].sum()),
        "mu_up_prev": float(sol.mu_up[i, k]),
        "mu_lo_t": float(mu_lo_t),
        "mu_lo_prev": float(sol.mu_lo[i, k]),
        "mu_up_t": float(mu_up_t),
    }


def generator_energy_price(sol: WindowSolution, i: int, t: int) -> float:
    c = gen_components(sol, i, t)
    return c["omega0"] + c["omegaS"] + c["dmu_t"] - c["dmu_prev"]


def generator_reserve_prices(sol: WindowSolution, i: int, t: int) -> tuple[float, float]:
    c = gen_components(sol, i, t)
    pu = c["alpha_sum"] - c["mu_up_prev"] - c["mu_lo_t"]
    pd = c["beta_sum"] - c["mu_lo_prev"] - c["mu_up_t"]
    return pu, pd


def load_components(sol: WindowSolution, l: int, t: int) -> dict:
    _require(sol, "bal0")
    k = _position(sol, t)
    bus = sol.problem.vcase.load_bus[l]
    return {
        "omega0": float(sol.omega0()[k, bus]),
        "omegaS": float(sol.omegaS()[k, :, bus].sum()) if sol.S else 0.0,
        "gamma_sum": float(sol.gamma_up[l, k].sum()),
    }


def load_energy_price(sol: WindowSolution, l: int, t: int) -> float:
    c = load_components(sol, l, t)
    return c["omega0"] + c["omegaS"] + c["gamma_sum"]


def load_fluctuation_payment(sol: WindowSolution, l: int, t: int, tol: float = 1e-9,
                             flag: bool = True) -> float:
    """Per-hour payment for load ``l``'s possible deviations from forecast.

    Flags :class:`AssumptionViolated` when the load is fully shed in some
    scenario (the payment is still returned).
    """
    _require(sol, "bal0")
    k = _position(sol, t)
    if sol.S == 0:
        return 0.0
    if flag and np.any(sol.gamma_up[l, k] > tol):
        warnings.warn(f"load {sol.problem.vcase.load_ids[l]!r} is fully shed in some scenario "
                      f"at interval {t + 1}", AssumptionViolated, stacklevel=2)
    bus = sol.problem.vcase.load_bus[l]
    xi = np.array([tr.load_errors[l, k] for tr in sol.problem.scenarios.trajectories])
    return float(sol.omegaS()[k, :, bus] @ xi)


@dataclass(eq=False)
class PriceSchedule:
    """Prices per generator/load and interval for one scheme.

    Arrays are ``(n_gen, n_int)`` / ``(n_load, n_int)`` over ``intervals``
    (0-based).  ``components`` holds the additive pieces by name.
    """

    scheme: str
    intervals: tuple
    gen_ids: list
    load_ids: list
    pi_g: np.ndarray
    pi_U: np.ndarray
    pi_D: np.ndarray
    pi_d: np.ndarray
    gamma_F: np.ndarray
    gen_parts: dict = field(default_factory=dict)
    load_parts: dict = field(default_factory=dict)

    def column(self, t: int) -> int:
        return self.intervals.index(t)

    def recompose(self) -> dict:
        """Re-sum stored components into prices (consistency check)."""
        gp, lp = self.gen_parts, self.load_parts
        if self.scheme == PROPOSED:
            g = gp["omega0"] + gp["omegaS"] + gp["dmu_t"] - gp["dmu_prev"]
            u = gp["alpha_sum"] - gp["mu_up_prev"] - gp["mu_lo_t"]
            d = gp["beta_sum"] - gp["mu_lo_prev"] - gp["mu_up_t"]
        elif self.scheme == NO_RAMPING:
            g = gp["omega0"] + gp["omegaS"]
            u, d = gp["alpha_sum"], gp["beta_sum"]
        else:
            g, u, d = gp["omega0"], gp["chiU"], gp["chiD"]
        return {"pi_g": g, "pi_U": u, "pi_D": d,
                "pi_d": lp["omega0"] + lp["omegaS"] + lp["gamma_sum"]}

    def to_rows(self) -> list[dict]:
        rows = []
        for c, t in enumerate(self.intervals):
            for i, gid in enumerate(self.gen_ids):
                row = {"scheme": self.scheme, "interval": t + 1, "kind": "generator", "id": gid,
                       "pi_g": self.pi_g[i, c], "pi_U": self.pi_U[i, c], "pi_D": self.pi_D[i, c],
                       "pi_d": "", "Gamma_F": ""}
                row.update({name: v[i, c] for name, v in self.gen_parts.items()})
                rows.append(row)
            for l, lid in enumerate(self.load_ids):
                row = {"scheme": self.scheme, "interval": t + 1, "kind": "load", "id": lid,
                       "pi_g": "", "pi_U": "", "pi_D": "",
                       "pi_d": self.pi_d[l, c], "Gamma_F": self.gamma_F[l, c]}
                row.update({f"load_{name}": v[l, c] for name, v in self.load_parts.items()})
                rows.append(row)
        return rows

    def csv_header(self) -> list[str]:
        return (["scheme", "interval", "kind", "id", "pi_g", "pi_U", "pi_D", "pi_d", "Gamma_F"]
                + list(self.gen_parts) + [f"load_{n}" for n in self.load_parts])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.csv_header(), restval="", lineterminator="\n")
        writer.writeheader()
        for row in self.to_rows():
            writer.writerow({k: csv_cell(v) for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "intervals": [t + 1 for t in self.intervals],
            "generators": [str(g) for g in self.gen_ids],
            "loads": [str(l) for l in self.load_ids],
            "pi_g": self.pi_g.tolist(), "pi_U": self.pi_U.tolist(), "pi_D": self.pi_D.tolist(),
            "pi_d": self.pi_d.tolist(), "Gamma_F": self.gamma_F.tolist(),
            "generator_components": {k: v.tolist() for k, v in self.gen_parts.items()},
            "load_components": {k: v.tolist() for k, v in self.load_parts.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def concat(cls, schedules: list["PriceSchedule"]) -> "PriceSchedule":
        if not schedules:
            raise ValueError("nothing to concatenate")
        first = schedules[0]
        if any(s.scheme != first.scheme for s in schedules):
            raise ValueError("cannot mix schemes")

        def cat(name):
            return np.concatenate([getattr(s, name) for s in schedules], axis=1)

        return cls(
            scheme=first.scheme,
            intervals=tuple(t for s in schedules for t in s.intervals),
            gen_ids=first.gen_ids, load_ids=first.load_ids,
            pi_g=cat("pi_g"), pi_U=cat("pi_U"), pi_D=cat("pi_D"), pi_d=cat("pi_d"),
            gamma_F=cat("gamma_F"),
            gen_parts={k: np.concatenate([s.gen_parts[k] for s in schedules], axis=1)
                       for k in first.gen_parts},
            load_parts={k: np.concatenate([s.load_parts[k] for s in schedules], axis=1)
                        for k in first.load_parts},
        )


def _stochastic_schedule(sol: WindowSolution, t: int, scheme: str, flag: bool) -> PriceSchedule:
    vc = sol.problem.vcase
    G, L = vc.n_gen, vc.n_load
    gp = {n: np.zeros((G, 1)) for n in GEN_COMPONENTS}
    lp = {n: np.zeros((L, 1)) for n in LOAD_COMPONENTS}
    for i in range(G):
        for n, v in gen_components(sol, i, t).items():
            gp[n][i, 0] = v
    for l in range(L):
        for n, v in load_components(sol, l, t).items():
            lp[n][l, 0] = v
    gf = np.array([[load_fluctuation_payment(sol, l, t, flag=flag)] for l in range(L)]).reshape(L, 1)
    if scheme == NO_RAMPING:
        for n in ("dmu_t", "dmu_prev", "mu_up_prev", "mu_lo_t", "mu_lo_prev", "mu_up_t"):
            gp[n][:] = 0.0
    sched = PriceSchedule(scheme, (t,), vc.gen_ids, vc.load_ids,
                          np.zeros((G, 1)), np.zeros((G, 1)), np.zeros((G, 1)),
                          np.zeros((L, 1)), gf, gp, lp)
    rec = sched.recompose()
    sched.pi_g, sched.pi_U, sched.pi_D, sched.pi_d = rec["pi_g"], rec["pi_U"], rec["pi_D"], rec["pi_d"]
    return sched


def proposed_prices(sol: WindowSolution, t: int | None = None, flag: bool = True) -> PriceSchedule:
    """Proposed prices for interval ``t`` (default: the binding interval)."""
    return _stochastic_schedule(sol, sol.window[0] if t is None else t, PROPOSED, flag)


def benchmark_no_ramping_prices(sol: WindowSolution, t: int | None = None,
                                flag: bool = False) -> PriceSchedule:
    return _stochastic_schedule(sol, sol.window[0] if t is None else t, NO_RAMPING, flag)


def deterministic_prices(sol: WindowSolution, t: int | None = None) -> PriceSchedule:
    """Nodal energy prices and uniform reserve prices of the requirement model."""
    _require(sol, "bal0", "reqU", "reqD")
    t = sol.window[0] if t is None else t
    k = _position(sol, t)
    vc = sol.problem.vcase
    G, L = vc.n_gen, vc.n_load
    om = sol.omega0()[k]
    eta = om[vc.gen_bus].reshape(G, 1)
    gp = {"omega0": eta.copy(),
          "chiU": np.full((G, 1), sol.chiU[k]),
          "chiD": np.full((G, 1), sol.chiD[k])}
    lp = {"omega0": om[vc.load_bus].reshape(L, 1), "omegaS": np.zeros((L, 1)),
          "gamma_sum": np.zeros((L, 1))}
    return PriceSchedule(DETERMINISTIC, (t,), vc.gen_ids, vc.load_ids,
                         eta, gp["chiU"].copy(), gp["chiD"].copy(), lp["omega0"].copy(),
                         np.zeros((L, 1)), gp, lp)


def schedule_for(sol: WindowSolution, scheme: str, t: int | None = None) -> PriceSchedule:
    if scheme == PROPOSED:
        return proposed_prices(sol, t, flag=False)
    if scheme == NO_RAMPING:
        return benchmark_no_ramping_prices(sol, t)
    if scheme == DETERMINISTIC:
        return deterministic_prices(sol, t)
    raise ValueError(f"unknown scheme {scheme!r}")


def kkt_residuals(sol: WindowSolution) -> dict:
    """Largest violation of the three generator stationarity identities.

    Evaluated at every unfixed (generator, window position) with the
    proposed price formulas; returns one maximum per identity.
    """
    vc = sol.problem.vcase
    w = sol.window
    out = {"energy": 0.0, "reserve_up": 0.0, "reserve_dn": 0.0}
    fixed = sol.problem.fixed
    for i in range(vc.n_gen):
        for k, t in enumerate(w):
            if (i, k) in fixed:
                continue
            if sol.mode == DETERMINISTIC:
                c = gen_components(sol, i, t)
                pg = c["omega0"] + c["dmu_t"] - c["dmu_prev"]
                pu = sol.chiU[k] - c["mu_up_prev"] - c["mu_lo_t"]
                pd = sol.chiD[k] - c["mu_lo_prev"] - c["mu_up_t"]
            else:
                pg = generator_energy_price(sol, i, t)
                pu, pd = generator_reserve_prices(sol, i, t)
            r_g = -pg + vc.cg[i, t] + sol.ups_up[i, k] - sol.ups_lo[i, k]
            r_u = -pu + vc.cu[i, t] + sol.ups_up[i, k] - sol.rhoU_lo[i, k] + sol.rhoU_up[i, k]
            r_d = -pd + vc.cd[i, t] + sol.ups_lo[i, k] - sol.rhoD_lo[i, k] + sol.rhoD_up[i, k]
            out["energy"] = max(out["energy"], abs(r_g))
            out["reserve_up"] = max(out["reserve_up"], abs(r_u))
            out["reserve_dn"] = max(out["reserve_dn"], abs(r_d))
    out["max"] = max(out.values())
    return out


@dataclass
class SensitivityProbe:
    quantity: str
    price: float
    left: float | None
    right: float | None
    degenerate: bool

    @property
    def central(self) -> float | None:
        if self.left is None or self.right is None:
            return None
        return 0.5 * (self.left + self.right)

    @property
    def error(self) -> float | None:
        c = self.central
        return None if c is None else abs(c - self.price)


@dataclass
class SensitivityReport:
    generator: int
    interval: int
    delta: float
    probes: list

    @property
    def degenerate(self) -> bool:
        return any(p.degenerate for p in self.probes)

    def max_error(self, include_degenerate: bool = False) -> float:
        errs = [p.error for p in self.probes
                if p.error is not None and (include_degenerate or not p.degenerate)]
        return max(errs, default=0.0)


def _fixed_problem(problem: WindowProblem, i: int, k: int, values) -> WindowProblem:
    fixed = dict(problem.fixed)
    fixed[(i, k)] = tuple(float(v) for v in values)
    return WindowProblem(problem.vcase, problem.window, problem.scenarios, problem.prior,
                         problem.mode, problem.req_up, problem.req_dn, fixed, problem.forecast)


def verify_price_sensitivity(sol: WindowSolution, i: int, t: int, delta: float = 0.1,
                             kink_tol: float = 1e-4, quantities=("g", "rU", "rD"),
                             tol: SolveTolerances | None = None) -> SensitivityReport:
    """Compare published prices with re-solve sensitivities.

    Generator ``i``'s energy and reserve at interval ``t`` are fixed at their
    optimum (own bid cost and own capability rows removed) and each fixed
    value is moved by ``+/- delta``.  The negated one-sided slopes of the
    remaining objective bracket the price; a disagreement beyond
    ``kink_tol`` is reported as degenerate with :class:`DegeneracyWarning`.
    """
    k = _position(sol, t)
    base_vals = np.array([sol.g[i, k], sol.rU[i, k], sol.rD[i, k]])
    if sol.mode == DETERMINISTIC:
        c = gen_components(sol, i, t)
        prices = (c["omega0"] + c["dmu_t"] - c["dmu_prev"],
                  sol.chiU[k] - c["mu_up_prev"] - c["mu_lo_t"],
                  sol.chiD[k] - c["mu_lo_prev"] - c["mu_up_t"])
    else:
        pu, pd = generator_reserve_prices(sol, i, t)
        prices = (generator_energy_price(sol, i, t), pu, pd)

    def value(vals):
        try:
            return solve_window(build_window_lp(_fixed_problem(sol.problem, i, k, vals)), tol).objective
        except SolverError:
            return None

    f0 = value(base_vals)
    if f0 is None:
        raise SolverError("reduced problem at the optimum failed to solve", window=sol.window)
    probes = []
    for q, name in enumerate(("g", "rU", "rD")):
        if name not in quantities:
            continue
        step = np.zeros(3)
        step[q] = delta
        up, dn = value(base_vals + step), value(base_vals - step)
        right = None if up is None else -(up - f0) / delta
        left = None if dn is None else -(f0 - dn) / delta
        scale = max(1.0, abs(prices[q]))
        degenerate = left is None or right is None or abs(left - right) > kink_tol * scale
        if degenerate:
            warnings.warn(f"kinked sensitivity for generator {i} {name} at interval {t + 1}: "
                          f"left={left} right={right}", DegeneracyWarning, stacklevel=2)
        probes.append(SensitivityProbe(name, float(prices[q]), left, right, degenerate))
    return SensitivityReport(i, t, delta, probes)
