"""Command-line entry points: ``run``, ``validate``, ``price`` and ``verify``.

Exit codes: 0 success, 1 bad input data, 2 usage error, 3 solver failure,
4 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cooptimizer import DETERMINISTIC
from .errors import DataError, RollClearError, SheddingPriceWarning, SolverError
from .experiments import (apply_ramping_case, cost_curve, draw_solvable_case, loc_sweep,
                          monte_carlo, sensitivity_probes, theorem_record, withholding_sweep)
from .grid import validate_case
from .io import (load_case, load_run_config, load_scenarios, load_solution, save_solution,
                 write_csv, write_json, write_reports)
from .lp import SolveTolerances
from .pricing import SCHEMES, kkt_residuals, schedule_for
from .rolling import RollingConfig, run_rolling_horizon, simulate_realization, total_system_cost
from .scenario import GeneratedScenarios, ScriptedScenarios, realize_day
from .settlement import settle

logger = logging.getLogger("rollclear")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3, 4


def _error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def _config(args):
    cfg = load_run_config(args.config)
    if args.scheme:
        cfg.schemes = tuple(args.scheme)
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    if args.out:
        cfg.out = str(Path(args.out).resolve())
    if args.tol_feas is not None:
        cfg.feas_tol = args.tol_feas
    if args.tol_comp is not None:
        cfg.comp_tol = args.tol_comp
    if args.jobs is not None:
        cfg.jobs = args.jobs
    cfg.check()
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    if not out.is_absolute() and cfg.base_dir != "." and not cfg.base_dir.startswith("bundled"):
        out = Path(cfg.base_dir) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario_source(cfg, vc, seed):
    if cfg.scenarios:
        sets = {}
        for p in cfg.scenarios:
            sets.update(load_scenarios(cfg.resolve(p), vc).sets)
        return ScriptedScenarios(sets)
    if cfg.uncertainty is not None:
        return GeneratedScenarios(replace(cfg.uncertainty, seed=seed))
    return None


def _load(cfg):
    case = load_case(cfg.resolve(cfg.case))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SheddingPriceWarning)
        vc = validate_case(case)
    return case, vc


def _single_horizon(cfg, out: Path) -> dict:
    case, vc = _load(cfg)
    tol = SolveTolerances(cfg.feas_tol, cfg.comp_tol)
    seed = cfg.seeds[0]
    stoch = [s for s in cfg.schemes if s != DETERMINISTIC]
    summary = {"case": case.name, "experiment": cfg.experiment, "seed": seed, "schemes": {}}
    truth = realize_day(vc, cfg.truth, seed=[seed, 1]) if cfg.truth is not None else None
    status = truth.line_status if truth is not None else None
    runs = []
    if stoch:
        runs.append((stoch, RollingConfig(schemes=tuple(stoch), tol=tol, keep_solutions=True)))
    if DETERMINISTIC in cfg.schemes:
        load = vc.dhat.sum(axis=0)
        f = cfg.req_fractions[0]
        runs.append(([DETERMINISTIC], RollingConfig(mode=DETERMINISTIC, req_up=f * load,
                                                    req_dn=f * load, tol=tol, keep_solutions=True)))
    for schemes, rc in runs:
        src = _scenario_source(cfg, vc, seed) if rc.mode != DETERMINISTIC else None
        hr = run_rolling_horizon(vc, src, rc, observed_status=status)
        oc = simulate_realization(hr, truth, tol) if truth is not None else None
        reps = {s: settle(hr, s, oc, tol) for s in schemes}
        prefix = "deterministic_" if rc.mode == DETERMINISTIC else ""
        write_reports(out, hr, reps, oc, prefix)
        sol_dir = out / f"{prefix}solutions"
        for sol in hr.solutions:
            save_solution(sol, sol_dir / f"window_{sol.window[0] + 1:03d}.json")
        for s, rep in reps.items():
            summary["schemes"][s] = {
                "profit": dict(zip(rep.gen_ids, rep.profit.tolist())),
                "loc": dict(zip(rep.gen_ids, rep.loc.tolist())),
                "iso_surplus": rep.iso_surplus(False),
                "iso_surplus_with_redispatch": rep.iso_surplus(True),
                "total_cost": total_system_cost(hr, oc)}
    write_json(summary, out / "summary.json")
    return summary


def _ramping_cases(cfg, case):
    if cfg.ramping_cases:
        return cfg.ramping_cases
    return {"base": None}


def _monte_carlo(cfg, out: Path) -> dict:
    case, vc = _load(cfg)
    if cfg.uncertainty is None:
        raise DataError(f"experiment {cfg.experiment!r} needs an 'uncertainty' section")
    fr = cfg.req_fractions
    all_rows, curves = [], []
    for name, levels in _ramping_cases(cfg, case).items():
        cs = case if levels is None else apply_ramping_case(case, levels, cfg.ramping_groups or None)
        rows = monte_carlo(cs, cfg.uncertainty, cfg.truth, cfg.days, fr, cfg.seeds[0],
                           tuple(s for s in cfg.schemes if s != DETERMINISTIC), cfg.jobs,
                           report_dir=str(out / "days" / name))
        for d, r in enumerate(rows):
            all_rows.append({"ramping_case": name, "day": d + 1, **r})
        curves += [{"ramping_case": name, **r} for r in cost_curve(rows, fr, seed=cfg.seeds[0])]
    write_csv(all_rows, out / "days.csv")
    write_csv(curves, out / "cost_curve.csv")
    surplus = [{"ramping_case": r["ramping_case"], "day": r["day"],
                **{k: v for k, v in r.items() if "surplus" in k}} for r in all_rows]
    write_csv(surplus, out / "surplus.csv")
    summary = {"experiment": cfg.experiment, "days": cfg.days, "curve": curves,
               "surplus_nonnegative_share": {
                   k: float(np.mean([r[k] >= -1e-6 for r in all_rows]))
                   for k in (all_rows[0] if all_rows else {}) if k.startswith("surplus_")}}
    write_json(summary, out / "summary.json")
    return summary


def _loc_sweep(cfg, out: Path) -> dict:
    case, _ = _load(cfg)
    if cfg.uncertainty is None:
        raise DataError("loc-sweep needs an 'uncertainty' section")
    groups = cfg.ramping_groups or None
    cs = case if groups is None else replace(case, meta={**case.meta, "ramping_groups": groups})
    rows = loc_sweep(cs, cfg.ramping_cases, cfg.uncertainty, tuple(cfg.schemes),
                     cfg.req_fractions[0])
    write_csv(rows, out / "loc_vs_ramping_case.csv")
    write_json(rows, out / "summary.json")
    return {"rows": rows}


def _withholding(cfg, out: Path) -> dict:
    case, _ = _load(cfg)
    if cfg.uncertainty is None:
        raise DataError("withholding-sweep needs an 'uncertainty' section")
    groups = cfg.ramping_groups or None
    cs = case if groups is None else replace(case, meta={**case.meta, "ramping_groups": groups})
    rows = withholding_sweep(cs, cfg.ramping_cases, cfg.uncertainty, cfg.withholding,
                             tuple(s for s in cfg.schemes if s != DETERMINISTIC))
    write_csv(rows, out / "withholding.csv")
    write_json(rows, out / "summary.json")
    return {"rows": rows}


_RUNNERS = {"single-horizon": _single_horizon, "monte-carlo": _monte_carlo,
            "reserve-requirement-sweep": _monte_carlo, "loc-sweep": _loc_sweep,
            "withholding-sweep": _withholding}


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    _RUNNERS[cfg.experiment](cfg, out)
    print(f"wrote results to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.config:
        cfg = load_run_config(args.config)
        cfg.check()
        case_src, scen = cfg.resolve(cfg.case), [cfg.resolve(p) for p in cfg.scenarios]
    elif args.case:
        case_src, scen = args.case, list(args.scenarios or [])
    else:
        _error("usage", "validate needs a case path or --config")
        return EXIT_USAGE
    case = load_case(case_src)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        vc = validate_case(case)
    for w in caught:
        print(f"warning: {w.message}")
    n_sets = 0
    for p in scen:
        n_sets += len(load_scenarios(p, vc).sets)
    print(f"ok: {vc.n_bus} buses, {vc.n_line} lines, {vc.n_gen} generators, {vc.n_load} loads, "
          f"T={vc.T}, W={vc.W}; {n_sets} scenario window(s) checked")
    return EXIT_OK


def cmd_price(args) -> int:
    sol = load_solution(args.solution)
    schemes = args.scheme or ([DETERMINISTIC] if sol.mode == DETERMINISTIC else ["proposed"])
    out = Path(args.out) if args.out else None
    for s in schemes:
        sched = schedule_for(sol, s, sol.window[0])
        if out is None:
            print(f"# {s}")
            sys.stdout.write(sched.to_csv())
        else:
            out.mkdir(parents=True, exist_ok=True)
            (out / f"prices_{s}.csv").write_text(sched.to_csv())
            (out / f"prices_{s}.json").write_text(sched.to_json() + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    """KKT identities and sensitivity probes on a configured run, plus a theorem battery."""
    tol_comp = args.tol_comp if args.tol_comp is not None else 1e-6
    seed = args.seed or 0
    failures = []
    if args.config:
        cfg = _config(args)
        _, vc = _load(cfg)
        rc = RollingConfig(tol=SolveTolerances(cfg.feas_tol, cfg.comp_tol), keep_solutions=True)
        hr = run_rolling_horizon(vc, _scenario_source(cfg, vc, seed), rc)
        worst = max(kkt_residuals(s)["max"] for s in hr.solutions)
        print(f"kkt: max residual {worst:.3e} over {len(hr.solutions)} windows")
        if worst > tol_comp:
            failures.append("kkt")
        rng = np.random.default_rng(seed)
        probes = [sensitivity_probes(s, rng, 4) for s in hr.solutions]
        err = max(p.max_error for p in probes)
        print(f"sensitivity: max error {err:.3e} on non-degenerate probes "
              f"({sum(p.n_probes - p.n_degenerate for p in probes)} of "
              f"{sum(p.n_probes for p in probes)})")
        if err > 1e-3:
            failures.append("sensitivity")
    recs = [theorem_record(draw_solvable_case([seed, c])) for c in range(args.cases)]
    worst_loc = max(r.max_loc / max(r.gross_revenue, 1.0) for r in recs)
    worst_profit = min(r.min_profit for r in recs)
    worst_kkt = max(r.max_kkt for r in recs)
    print(f"theorems: {len(recs)} random cases, max relative LOC {worst_loc:.3e}, "
          f"min profit {worst_profit:.3e}, max kkt {worst_kkt:.3e}")
    if worst_loc > 1e-5:
        failures.append("zero-loc")
    if worst_profit < -1e-6:
        failures.append("cost-recovery")
    if worst_kkt > tol_comp:
        failures.append("battery-kkt")
    if failures:
        _error("verification", "checks failed", checks=failures)
        return EXIT_CHECK
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rollclear",
                                 description="Rolling-window energy and reserve clearing.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="run configuration JSON")
        p.add_argument("--scheme", action="append", choices=SCHEMES,
                       help="pricing scheme (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--tol-feas", type=float)
        p.add_argument("--tol-comp", type=float)
        p.add_argument("--jobs", type=int)

    p = sub.add_parser("run", help="execute the experiment of a run configuration")
    common(p, config_required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a case and its scripted scenarios")
    p.add_argument("case", nargs="?")
    p.add_argument("--scenarios", action="append")
    p.add_argument("--config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("price", help="re-derive prices from a stored window solution")
    p.add_argument("solution")
    p.add_argument("--scheme", action="append", choices=SCHEMES)
    p.add_argument("--out")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("verify", help="KKT, sensitivity and theorem checks")
    common(p)
    p.add_argument("--cases", type=int, default=20, help="random cases in the theorem battery")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SolverError as exc:
        window = getattr(exc, "window", None)
        _error(type(exc).__name__, str(exc),
               window=None if window is None else [t + 1 for t in window])
        return EXIT_SOLVER
    except (DataError, RollClearError, FileNotFoundError) as exc:
        record = getattr(exc, "record", None)
        _error(type(exc).__name__, str(exc), **({"record": record} if record else {}))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
