"""Experiment drivers: randomized theorem batteries, Monte-Carlo days and sweeps."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .cooptimizer import DETERMINISTIC, STOCHASTIC
from .errors import DegeneracyWarning, SheddingPriceWarning, SolverError
from .grid import GridCase, Generator, Line, LoadPoint, ValidatedCase, compute_ptdf, validate_case
from .pricing import NO_RAMPING, PROPOSED, kkt_residuals, verify_price_sensitivity
from .rolling import RollingConfig, run_rolling_horizon, simulate_realization, total_system_cost
from .scenario import GeneratedScenarios, TruthConfig, UncertaintyConfig, realize_day
from .settlement import bid_perturbation_experiment, settle

logger = logging.getLogger(__name__)


# randomized cases ---------------------------------------------------------

def _random_tree_lines(rng, n_bus):
    edges = []
    for b in range(1, n_bus):
        edges.append((int(rng.integers(0, b)), b))
    extra = int(rng.integers(0, n_bus))
    for _ in range(extra):
        a, b = rng.choice(n_bus, 2, replace=False)
        edges.append((int(min(a, b)), int(max(a, b))))
    return edges


def random_case(seed, n_bus=None, n_gen=None, T=None, W=None, tight_ramps=True) -> GridCase:
    """A small random networked case with a feasible nominal trajectory.

    A reference output path is drawn first (respecting ramp limits with zero
    reserve); loads are set to absorb it and line ratings are set above its
    flows, so the nominal dispatch problem is feasible by construction.
    """
    rng = np.random.default_rng(seed)
    n_bus = n_bus or int(rng.integers(2, 7))
    n_gen = n_gen or int(rng.integers(2, 9))
    T = T or int(rng.integers(2, 13))
    W = W or int(rng.integers(1, 5))
    buses = [f"b{j}" for j in range(n_bus)]
    edges = _random_tree_lines(rng, n_bus)
    gmax = rng.uniform(50, 200, n_gen)
    ramp = gmax * (rng.uniform(0.08, 0.25, n_gen) if tight_ramps else rng.uniform(0.5, 1.0, n_gen))
    g_ref = np.zeros((n_gen, T + 1))
    g_ref[:, 0] = gmax * rng.uniform(0.2, 0.6, n_gen)
    for t in range(1, T + 1):
        step = ramp * rng.uniform(-0.7, 0.7, n_gen)
        g_ref[:, t] = np.clip(g_ref[:, t - 1] + step, 0.0, 0.85 * gmax)
    gen_bus = rng.integers(0, n_bus, n_gen)
    n_load = int(rng.integers(1, 4))
    load_bus = rng.integers(0, n_bus, n_load)
    shares = rng.dirichlet(np.ones(n_load))
    total = g_ref[:, 1:].sum(axis=0)
    forecast = shares[:, None] * total[None, :]
    cg = rng.uniform(10, 60, n_gen)
    gens = []
    for i in range(n_gen):
        gens.append(Generator(
            f"G{i + 1}", buses[gen_bus[i]],
            tuple(cg[i] * rng.uniform(0.95, 1.05, T)),
            tuple(np.full(T, cg[i] * rng.uniform(0.05, 0.3))),
            tuple(np.full(T, cg[i] * rng.uniform(0.05, 0.3))),
            tuple(np.zeros(T)), tuple(np.full(T, gmax[i])),
            tuple(np.full(T, gmax[i] * rng.uniform(0.1, 0.5))),
            tuple(np.full(T, gmax[i] * rng.uniform(0.1, 0.5))),
            tuple(np.full(T, ramp[i])), tuple(np.full(T, ramp[i])),
            float(g_ref[i, 0])))
    loads = [LoadPoint(f"D{l + 1}", buses[load_bus[l]], tuple(forecast[l]),
                       tuple(np.full(T, 1000.0))) for l in range(n_load)]
    lines = [Line(f"L{j + 1}", buses[a], buses[b], float(rng.uniform(5, 20)), 1.0, 1.0)
             for j, (a, b) in enumerate(edges)]
    draft = GridCase(buses, lines, gens, loads, T, W, float(rng.choice([0.25, 0.5, 1.0])),
                     buses[0], f"random-{seed}")
    vc = validate_case(draft, warn_shedding=False)
    sf = compute_ptdf(vc)
    flows = sf.S_G @ g_ref[:, 1:] - sf.S_D @ forecast
    peak = np.abs(flows).max(axis=1)
    cap = np.maximum(peak * rng.uniform(1.05, 1.6, len(lines)), 5.0)
    lines = [replace(ln, capacity_f=float(c), contingency_capacity=float(c * 1.5))
             for ln, c in zip(lines, cap)]
    return replace(draft, lines=tuple(lines))


def random_uncertainty(seed, vcase: ValidatedCase) -> UncertaintyConfig:
    rng = np.random.default_rng([seed, 7])
    return UncertaintyConfig(load_sigma_growth=float(rng.uniform(0.0005, 0.01)),
                             outage_rate_per_interval=float(rng.uniform(0.0, 0.2)),
                             repair_rate=float(rng.uniform(0.0, 0.5)),
                             scenario_count=int(rng.integers(1, 6)), seed=int(seed),
                             p_base=float(rng.uniform(0.0, 0.5)))


@dataclass
class BatteryCase:
    seed: int
    vcase: ValidatedCase
    uncertainty: UncertaintyConfig
    horizon: object


def draw_solvable_case(seed, max_tries: int = 50, keep_solutions: bool = False, **kw) -> BatteryCase:
    """Draw random cases from ``seed`` until a rolling run clears every window."""
    for attempt in range(max_tries):
        s = [seed, attempt]
        case = random_case(np.random.default_rng(s).integers(2**31), **kw)
        vc = validate_case(case, warn_shedding=False)
        unc = random_uncertainty(int(np.random.default_rng(s).integers(2**31)), vc)
        try:
            hr = run_rolling_horizon(vc, GeneratedScenarios(unc),
                                     RollingConfig(keep_solutions=keep_solutions))
        except SolverError:
            continue
        return BatteryCase(seed, vc, unc, hr)
    raise SolverError(f"no solvable case drawn from seed {seed}")


@dataclass
class TheoremRecord:
    seed: int
    max_loc: float
    gross_revenue: float
    min_profit: float
    max_kkt: float
    benchmark_max_loc: float


def theorem_record(bc: BatteryCase) -> TheoremRecord:
    rep = settle(bc.horizon, PROPOSED)
    bench = settle(bc.horizon, NO_RAMPING)
    gross = float(np.abs(rep.gen_credit).sum())
    zero_min = [i for i in range(bc.vcase.n_gen) if np.all(bc.vcase.gmin[i] == 0)]
    min_profit = float(rep.profit[zero_min].min()) if zero_min else 0.0
    kkt = max([w.identities.get("max", 0.0) for w in bc.horizon.windows], default=0.0)
    return TheoremRecord(bc.seed, float(rep.loc.max()), gross, min_profit, kkt,
                         float(bench.loc.max()))


def theorem_battery(n_cases: int = 200, seed: int = 0) -> list[TheoremRecord]:
    return [theorem_record(draw_solvable_case([seed, c])) for c in range(n_cases)]


@dataclass
class ProbeSummary:
    n_probes: int
    n_degenerate: int
    max_error: float

    @property
    def nondegenerate_share(self) -> float:
        return 1.0 - self.n_degenerate / self.n_probes if self.n_probes else 0.0


def sensitivity_probes(sol, rng, n_probes: int = 10, delta: float = 0.1,
                       quantities=("g",)) -> ProbeSummary:
    """Random (generator, interval) re-solve probes on one window solution."""
    G, K = sol.g.shape
    errs, n, n_deg = [], 0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        for _ in range(n_probes):
            i, k = int(rng.integers(G)), int(rng.integers(K))
            rep = verify_price_sensitivity(sol, i, sol.window[k], delta, quantities=quantities)
            for p in rep.probes:
                n += 1
                if p.degenerate:
                    n_deg += 1
                else:
                    errs.append(p.error)
    return ProbeSummary(n, n_deg, max(errs, default=0.0))


# synthetic eight-zone case -------------------------------------------------

ZONES = ("ME", "NH", "VT", "CT", "RI", "SEMA", "WCMA", "NEMA")
# L11 (CT-RI) is one of three interfaces into the NEMA/SEMA/RI load pocket
ZONE_LINES = (("ME", "NH"), ("ME", "NH"), ("NH", "VT"), ("NH", "NEMA"), ("NH", "WCMA"),
              ("VT", "WCMA"), ("WCMA", "CT"), ("WCMA", "CT"), ("WCMA", "NEMA"),
              ("NEMA", "SEMA"), ("CT", "RI"), ("SEMA", "RI"))
GROUP_ZONES = {"1": ("ME", "NH", "VT", "WCMA", "CT"), "2": ("NEMA", "SEMA", "RI", "CT")}
ZONE_SHARE = {"ME": 0.09, "NH": 0.09, "VT": 0.04, "CT": 0.27, "RI": 0.07, "SEMA": 0.12,
              "WCMA": 0.14, "NEMA": 0.18}
RAMPING_CASES = {"A": (300.0, 300.0), "B": (300.0, 400.0), "C": (300.0, 500.0),
                 "D": (400.0, 500.0), "E": (400.0, 600.0), "F": (500.0, 600.0),
                 "G": (500.0, 700.0)}


def daily_profile(T: int = 24, low: float = 0.62, high: float = 1.0) -> np.ndarray:
    h = np.arange(T) * 24.0 / T
    shape = 0.5 - 0.5 * np.cos((h - 4.0) / 24.0 * 2 * np.pi)
    shape += 0.15 * np.exp(-0.5 * ((h - 18.5) / 1.5) ** 2)
    shape = (shape - shape.min()) / (shape.max() - shape.min())
    return low + (high - low) * shape


def synthetic_eight_zone(seed: int = 2024, T: int = 24, W: int = 4, peak: float = 8000.0,
                         n_group: int = 10) -> GridCase:
    """Eight-zone case with 900 MW interfaces and two generator groups.

    Group 1 holds cheaper units, group 2 costlier ones; reserve bids are one
    fifth of energy bids.  Ramp limits are set per group by a ramping case
    (see :func:`apply_ramping_case`); the default is case A.
    """
    rng = np.random.default_rng(seed)
    lines = [Line(f"L{j + 1}", a, b, float(rng.uniform(8, 15)), 900.0, 990.0)
             for j, (a, b) in enumerate(ZONE_LINES)]
    prof = daily_profile(T)
    loads = [LoadPoint(f"D_{z}", z, tuple(np.round(peak * ZONE_SHARE[z] * prof, 3)),
                       tuple(np.full(T, 1000.0))) for z in ZONES]
    gens, groups = [], {"1": [], "2": []}
    for grp, (cost_lo, cost_hi, cap_lo, cap_hi) in (("1", (15, 35, 600, 900)),
                                                     ("2", (40, 90, 300, 600))):
        for j in range(n_group):
            zones = GROUP_ZONES[grp]
            zone = zones[j % len(zones)]
            c = float(np.round(rng.uniform(cost_lo, cost_hi), 2))
            cap = float(np.round(rng.uniform(cap_lo, cap_hi)))
            ramp = RAMPING_CASES["A"][0 if grp == "1" else 1]
            gid = f"G{grp}_{j + 1:02d}"
            groups[grp].append(gid)
            gens.append(Generator(gid, zone, tuple([c] * T), tuple([c / 5] * T),
                                  tuple([c / 5] * T), tuple([0.0] * T), tuple([cap] * T),
                                  tuple([round(0.5 * cap)] * T), tuple([round(0.5 * cap)] * T),
                                  tuple([ramp] * T), tuple([ramp] * T), 0.0))
    case = GridCase(ZONES, tuple(lines), tuple(gens), tuple(loads), T, W, 1.0, "WCMA",
                    "eight_zone_synthetic",
                    meta={"ramping_groups": groups, "ramping_cases": {k: list(v) for k, v in
                                                                      RAMPING_CASES.items()},
                          "outage_lines": ["L11"]})
    return _initialize_output(case)


def _initialize_output(case: GridCase) -> GridCase:
    """Set initial outputs to the first-interval network dispatch without reserve."""
    first = replace(case, horizon_T=1, window_W=1,
                    generators=tuple(replace(g, **{k: tuple(getattr(g, k)[:1]) for k in
                                                   ("cost_energy", "cost_res_up", "cost_res_dn",
                                                    "g_min", "g_max", "res_up_cap", "res_dn_cap")},
                                             ramp_up=(1e9,), ramp_dn=(1e9,))
                                     for g in case.generators),
                    loads=tuple(replace(l, forecast=tuple(l.forecast[:1]),
                                        shedding_price=tuple(l.shedding_price[:1]))
                                for l in case.loads))
    vc = validate_case(first, warn_shedding=False)
    hr = run_rolling_horizon(vc, None, RollingConfig(mode=DETERMINISTIC, check_kkt=False,
                                                     schemes=()))
    g0 = np.round(hr.g[:, 0], 6)
    gens = tuple(replace(g, initial_output=float(max(v, 0.0))) for g, v in zip(case.generators, g0))
    return replace(case, generators=gens)


def apply_ramping_case(case: GridCase, levels, groups: dict | None = None) -> GridCase:
    """Set ramp limits of generator groups "1" and "2" to ``levels`` (MW per interval)."""
    groups = groups or case.meta.get("ramping_groups", {})
    level_of = {}
    for grp, lvl in zip(("1", "2"), levels):
        for gid in groups.get(grp, []):
            level_of[gid] = float(lvl)
    gens = []
    for g in case.generators:
        if g.id in level_of:
            r = tuple([level_of[g.id]] * case.horizon_T)
            g = replace(g, ramp_up=r, ramp_dn=r)
        gens.append(g)
    return replace(case, generators=tuple(gens))


# Monte-Carlo and sweeps --------------------------------------------------------

def _day(args):
    (case, unc, truth, seed, req_fracs, schemes, report_dir) = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SheddingPriceWarning)
        vc = validate_case(case)
    path = realize_day(vc, truth, seed=[seed, 1])
    out = {"seed": seed}
    hr = run_rolling_horizon(vc, GeneratedScenarios(unc, seed=seed), RollingConfig(),
                             observed_status=path.line_status)
    oc = simulate_realization(hr, path)
    out["proposed_cost"] = total_system_cost(hr, oc)
    out["proposed_shed"] = float(oc.shed.sum())
    reports = {}
    for sch in schemes:
        rep = reports[sch] = settle(hr, sch, oc, compute_loc=False)
        out[f"surplus_{sch}"] = rep.iso_surplus(False)
        out[f"surplus_{sch}_with_redispatch"] = rep.iso_surplus(True)
    if report_dir is not None:
        from .io import write_reports

        write_reports(report_dir, hr, reports, oc)
    load = vc.dhat.sum(axis=0)
    for f in req_fracs:
        cfg = RollingConfig(mode=DETERMINISTIC, req_up=f * load, req_dn=f * load, check_kkt=False)
        hd = run_rolling_horizon(vc, None, cfg, observed_status=path.line_status)
        od = simulate_realization(hd, path)
        out[f"det_cost_{f:.4f}"] = total_system_cost(hd, od)
        rep = settle(hd, DETERMINISTIC, od, compute_loc=False)
        out[f"det_surplus_{f:.4f}"] = rep.iso_surplus(False)
    return out


def monte_carlo(case: GridCase, uncertainty: UncertaintyConfig, truth: TruthConfig, days: int,
                req_fractions=(), seed: int = 0, schemes=(PROPOSED, NO_RAMPING),
                jobs: int = 1, report_dir=None) -> list[dict]:
    """One row per simulated day: proposed and deterministic costs and surpluses.

    With ``report_dir`` set, each day's stochastic horizon is also written
    to ``report_dir/day_NNN``.
    """
    args = [(case, uncertainty, truth, int(seed) * 100003 + d, tuple(req_fractions),
             tuple(schemes), None if report_dir is None else f"{report_dir}/day_{d + 1:03d}")
            for d in range(days)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_day, args))
    return [_day(a) for a in args]


def bootstrap_mean_ci(x, n_boot: int = 4000, level: float = 0.95, seed: int = 0) -> tuple:
    """Percentile bootstrap interval for the mean of ``x``."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, x.size, (n_boot, x.size))].mean(axis=1)
    a = (1 - level) / 2
    return float(np.quantile(means, a)), float(np.quantile(means, 1 - a))


def cost_curve(rows: list[dict], req_fractions, n_boot: int = 4000, seed: int = 0) -> list[dict]:
    """Mean total cost with bootstrap bounds per reserve requirement, plus the stochastic model."""
    out = []
    prop = [r["proposed_cost"] for r in rows]
    lo, hi = bootstrap_mean_ci(prop, n_boot, seed=seed)
    out.append({"model": "proposed", "req_fraction": "", "mean_cost": float(np.mean(prop)),
                "ci_low": lo, "ci_high": hi})
    for f in req_fractions:
        x = [r[f"det_cost_{f:.4f}"] for r in rows]
        lo, hi = bootstrap_mean_ci(x, n_boot, seed=seed)
        out.append({"model": "deterministic", "req_fraction": float(f),
                    "mean_cost": float(np.mean(x)), "ci_low": lo, "ci_high": hi})
    return out


def loc_sweep(case: GridCase, ramping_cases: dict, uncertainty: UncertaintyConfig,
              schemes=(PROPOSED, NO_RAMPING, DETERMINISTIC), req_fraction: float = 0.05) -> list[dict]:
    """Total LOC uplift per ramping case and scheme (single forecast day)."""
    rows = []
    for name, levels in ramping_cases.items():
        vc = validate_case(apply_ramping_case(case, levels), warn_shedding=False)
        hr = run_rolling_horizon(vc, GeneratedScenarios(uncertainty), RollingConfig())
        for sch in schemes:
            h = hr
            if sch == DETERMINISTIC:
                load = vc.dhat.sum(axis=0)
                h = run_rolling_horizon(vc, None, RollingConfig(
                    mode=DETERMINISTIC, req_up=req_fraction * load, req_dn=req_fraction * load))
            rep = settle(h, sch)
            rows.append({"ramping_case": name, "scheme": sch, "total_loc": float(rep.loc.sum()),
                         "max_loc": float(rep.loc.max()), "surplus": rep.iso_surplus()})
    return rows


def withholding_sweep(case: GridCase, ramping_cases: dict, uncertainty: UncertaintyConfig,
                      fraction: float = 0.2, schemes=(PROPOSED, NO_RAMPING),
                      gen_ids=None) -> list[dict]:
    """Profit change from withholding ramping capability, per generator and case."""
    rows = []
    for name, levels in ramping_cases.items():
        cs = apply_ramping_case(case, levels)
        vc = validate_case(cs, warn_shedding=False)
        src = GeneratedScenarios(uncertainty)
        truthful = run_rolling_horizon(vc, src, RollingConfig())
        for gid in gen_ids or vc.gen_ids:
            for sch in schemes:
                res = bid_perturbation_experiment(
                    cs, gid, {"ramp_up": 1 - fraction, "ramp_dn": 1 - fraction}, sch,
                    RollingConfig(), src, truthful=truthful)
                rows.append({"ramping_case": name, "generator": gid, "scheme": sch,
                             "delta_profit": res.delta, "feasible": res.feasible})
    return rows
