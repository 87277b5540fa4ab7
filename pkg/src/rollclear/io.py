"""JSON/CSV file handling and bundled example cases.

Case documents mirror :class:`GridCase` field for field.  Per-interval
fields are lists indexed by interval 1..T (a bare number is broadcast).
Floats are written with Python's shortest round-trip representation, so a
write/read cycle reproduces every money and MW value exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .grid import GridCase, Generator, Line, LoadPoint, ValidatedCase, validate_case
from .pricing import csv_cell
from .scenario import (ScenarioSet, ScriptedScenarios, TruthConfig, UncertaintyConfig,
                       make_manual_scenarios, scenario_set_to_dict)

logger = logging.getLogger(__name__)

BUNDLED_PREFIX = "bundled:"

_GEN_SERIES = ("cost_energy", "cost_res_up", "cost_res_dn", "g_min", "g_max", "res_up_cap",
               "res_dn_cap", "ramp_up", "ramp_dn")
_LOAD_SERIES = ("forecast", "shedding_price")


def _read_json(source) -> tuple[object, str]:
    """Parse JSON from a path, a ``bundled:`` name or a raw string."""
    if isinstance(source, (dict, list)):
        return source, "<object>"
    text, origin = None, str(source)
    if isinstance(source, str) and source.startswith(BUNDLED_PREFIX):
        name = source[len(BUNDLED_PREFIX):]
        if not name.endswith(".json"):
            name += ".json"
        try:
            text = resources.files("rollclear.data").joinpath(name).read_text()
        except FileNotFoundError:
            raise ParseError(f"no bundled file named {name!r}") from None
    elif isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith(("{", "["))):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read {source}: {exc}") from None
    else:
        text, origin = source, "<string>"
    try:
        return json.loads(text), origin
    except json.JSONDecodeError as exc:
        raise ParseError(f"{origin}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _get(doc: dict, key: str, where: str, default=...):
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    if key not in doc:
        if default is ...:
            raise ParseError(f"{where}.{key}: required field missing")
        return default
    return doc[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _series(value, where: str) -> tuple:
    if isinstance(value, list):
        return tuple(_number(v, f"{where}[{j}]") for j, v in enumerate(value))
    return (_number(value, where),)


def case_from_dict(doc: dict) -> GridCase:
    """Build a :class:`GridCase` from a decoded case document."""
    where = "case"
    T = int(_number(_get(doc, "horizon_T", where), f"{where}.horizon_T"))

    def series(value, path):
        s = _series(value, path)
        return s * T if len(s) == 1 and not isinstance(value, list) else s

    lines = []
    for j, ln in enumerate(_get(doc, "lines", where, [])):
        p = f"{where}.lines[{j}]"
        cc = _get(ln, "contingency_capacity", p, None)
        lines.append(Line(_get(ln, "id", p), _get(ln, "from_bus", p), _get(ln, "to_bus", p),
                          _number(_get(ln, "susceptance", p), f"{p}.susceptance"),
                          _number(_get(ln, "capacity_f", p), f"{p}.capacity_f"),
                          None if cc is None else _number(cc, f"{p}.contingency_capacity")))
    gens = []
    for j, g in enumerate(_get(doc, "generators", where, [])):
        p = f"{where}.generators[{j}]"
        kw = {k: series(_get(g, k, p), f"{p}.{k}") for k in _GEN_SERIES}
        gens.append(Generator(_get(g, "id", p), _get(g, "bus", p),
                              initial_output=_number(_get(g, "initial_output", p), f"{p}.initial_output"),
                              **kw))
    loads = []
    for j, ld in enumerate(_get(doc, "loads", where, [])):
        p = f"{where}.loads[{j}]"
        loads.append(LoadPoint(_get(ld, "id", p), _get(ld, "bus", p),
                               series(_get(ld, "forecast", p), f"{p}.forecast"),
                               series(_get(ld, "shedding_price", p), f"{p}.shedding_price")))
    return GridCase(
        buses=tuple(_get(doc, "buses", where)),
        lines=tuple(lines),
        generators=tuple(gens),
        loads=tuple(loads),
        horizon_T=T,
        window_W=int(_number(_get(doc, "window_W", where), f"{where}.window_W")),
        interval_hours=_number(_get(doc, "interval_hours", where, 1.0), f"{where}.interval_hours"),
        slack_bus=_get(doc, "slack_bus", where, None),
        name=str(_get(doc, "name", where, "")),
        meta=dict(_get(doc, "meta", where, {}) or {}),
    )


def case_to_dict(case: GridCase) -> dict:
    doc = {
        "name": case.name,
        "buses": list(case.buses),
        "slack_bus": case.slack_bus,
        "horizon_T": int(case.horizon_T),
        "window_W": int(case.window_W),
        "interval_hours": float(case.interval_hours),
        "lines": [{"id": l.id, "from_bus": l.from_bus, "to_bus": l.to_bus,
                   "susceptance": float(l.susceptance), "capacity_f": float(l.capacity_f),
                   "contingency_capacity": (None if l.contingency_capacity is None
                                            else float(l.contingency_capacity))}
                  for l in case.lines],
        "generators": [{"id": g.id, "bus": g.bus,
                        **{k: [float(v) for v in getattr(g, k)] for k in _GEN_SERIES},
                        "initial_output": float(g.initial_output)} for g in case.generators],
        "loads": [{"id": l.id, "bus": l.bus,
                   **{k: [float(v) for v in getattr(l, k)] for k in _LOAD_SERIES}}
                  for l in case.loads],
    }
    if case.meta:
        doc["meta"] = case.meta
    return doc


def load_case(source) -> GridCase:
    """Read a case from a path, a ``bundled:<name>`` reference or a JSON string."""
    doc, origin = _read_json(source)
    try:
        return case_from_dict(doc)
    except ParseError as exc:
        raise ParseError(f"{origin}: {exc}") from None


def save_case(case: GridCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2) + "\n")


def load_scenarios(source, vcase: ValidatedCase) -> ScriptedScenarios:
    """Read scripted scenario windows.

    A document is either one window (``window`` + ``scenarios``) or an
    object with a ``windows`` list of such documents.
    """
    doc, origin = _read_json(source)
    windows = doc.get("windows", [doc]) if isinstance(doc, dict) else doc
    sets = {}
    for j, wdoc in enumerate(windows):
        try:
            sset = make_manual_scenarios(wdoc, vcase)
        except DataError as exc:
            raise ParseError(f"{origin}: windows[{j}]: {exc}") from None
        if sset.window:
            sets[sset.window[0]] = sset
    return ScriptedScenarios(sets)


def save_scenarios(sets: dict, vcase: ValidatedCase, path) -> None:
    doc = {"windows": [scenario_set_to_dict(s, vcase) for _, s in sorted(sets.items())]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# stored window solutions ----------------------------------------------------

_SOLUTION_ARRAYS = ("g", "rU", "rD", "dU", "dD", "dd", "lam0", "phi0", "lamS", "phiS",
                    "alpha_up", "alpha_lo", "beta_up", "beta_lo", "gamma_up", "gamma_lo",
                    "ups_up", "ups_lo", "rhoU_up", "rhoU_lo", "rhoD_up", "rhoD_lo",
                    "mu_up", "mu_lo", "chiU", "chiD", "ptdf0")


def _array(value, shape_hint=None) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if shape_hint is not None and a.size == 0:
        a = a.reshape(shape_hint)
    return a


def solution_to_dict(sol) -> dict:
    """Everything needed to re-derive prices from a solved window, case included."""
    p = sol.problem
    vc = p.vcase
    doc = {"case": case_to_dict(vc.case), "window": [t + 1 for t in p.window], "mode": p.mode,
           "objective": sol.objective, "kkt": sol.kkt, "present": sorted(sol.present),
           "scenarios": None if p.scenarios is None else scenario_set_to_dict(p.scenarios, vc),
           "prior": None if p.prior is None else {
               "g_prev": p.prior.g_prev, "rU_prev": p.prior.rU_prev, "rD_prev": p.prior.rD_prev},
           "req_up": p.req_up, "req_dn": p.req_dn,
           "ptdfS": [{"position": k, "scenario": s, "ptdf": m} for (k, s), m in sorted(sol.ptdfS.items())]}
    for name in _SOLUTION_ARRAYS:
        a = np.asarray(getattr(sol, name))
        doc[name] = {"shape": list(a.shape), "values": a.ravel()}
    return json.loads(json.dumps(doc, default=_jsonable))


def solution_from_dict(doc: dict):
    from .cooptimizer import PriorBinding, WindowProblem, WindowSolution

    try:
        case = case_from_dict(_get(doc, "case", "solution"))
        vc = validate_case(case, warn_shedding=False)
        window = tuple(int(t) - 1 for t in _get(doc, "window", "solution"))
        sc = doc.get("scenarios")
        sset = None if sc is None else make_manual_scenarios(sc, vc)
        pr = doc.get("prior")
        prior = None if pr is None else PriorBinding(*(np.asarray(pr[k], dtype=float) for k in
                                                      ("g_prev", "rU_prev", "rD_prev")))
        req = {k: None if doc.get(k) is None else np.asarray(doc[k], dtype=float)
               for k in ("req_up", "req_dn")}
        problem = WindowProblem(vc, window, sset, prior, _get(doc, "mode", "solution"), **req)
        arrays = {}
        for name in _SOLUTION_ARRAYS:
            entry = _get(doc, name, "solution")
            arrays[name] = np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
        ptdfS = {(int(e["position"]), int(e["scenario"])): np.asarray(e["ptdf"], dtype=float)
                 for e in doc.get("ptdfS", [])}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"solution: {exc}") from None
    return WindowSolution(problem, float(doc.get("objective", 0.0)), ptdfS=ptdfS,
                          kkt=dict(doc.get("kkt", {})),
                          present=frozenset(tuple(x) if isinstance(x, list) else x
                                            for x in doc.get("present", [])),
                          **arrays)


def save_solution(sol, path) -> None:
    write_json(solution_to_dict(sol), path)


def load_solution(source):
    """Read a window solution written by :func:`save_solution`."""
    doc, origin = _read_json(source)
    try:
        return solution_from_dict(doc)
    except ParseError as exc:
        raise ParseError(f"{origin}: {exc}") from None


EXPERIMENTS = ("single-horizon", "monte-carlo", "loc-sweep", "withholding-sweep",
               "reserve-requirement-sweep")


@dataclass
class RunConfig:
    """Everything a ``run`` invocation needs; paths are resolved against ``base_dir``."""

    case: str
    experiment: str = "single-horizon"
    scenarios: list = field(default_factory=list)
    uncertainty: UncertaintyConfig | None = None
    truth: TruthConfig | None = None
    schemes: tuple = ("proposed", "no_ramping")
    seeds: tuple = (0,)
    days: int = 1
    out: str = "out"
    feas_tol: float = 1e-7
    comp_tol: float = 1e-6
    jobs: int = 1
    req_fractions: tuple = (0.0,)
    ramping_cases: dict = field(default_factory=dict)
    ramping_groups: dict = field(default_factory=dict)
    withholding: float = 0.2
    base_dir: str = "."

    def resolve(self, path: str) -> str:
        if path.startswith(BUNDLED_PREFIX) or Path(path).is_absolute():
            return path
        return str(Path(self.base_dir) / path)

    def check(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise DataError(f"unknown experiment {self.experiment!r}")
        for p in [self.case, *self.scenarios]:
            rp = self.resolve(p)
            if not rp.startswith(BUNDLED_PREFIX) and not Path(rp).exists():
                raise DataError(f"referenced file {p!r} does not exist")
        if self.experiment in ("monte-carlo", "reserve-requirement-sweep") and self.truth is None:
            raise DataError(f"experiment {self.experiment!r} needs a 'truth' section")
        if self.experiment in ("loc-sweep", "withholding-sweep") and not self.ramping_cases:
            raise DataError(f"experiment {self.experiment!r} needs 'ramping_cases'")
        if self.days < 1:
            raise DataError("days must be at least 1")


def load_run_config(source) -> RunConfig:
    doc, origin = _read_json(source)
    base = "."
    if not isinstance(source, (dict, list)) and not str(source).startswith(BUNDLED_PREFIX) \
            and Path(str(source)).exists():
        base = str(Path(source).parent)
    if not isinstance(doc, dict):
        raise ParseError(f"{origin}: run config must be an object")
    unc = doc.get("uncertainty")
    truth = doc.get("truth")
    try:
        cfg = RunConfig(
            case=_get(doc, "case", "config"),
            experiment=doc.get("experiment", "single-horizon"),
            scenarios=list(doc.get("scenarios", [])),
            uncertainty=None if unc is None else UncertaintyConfig(
                **{k: (tuple(v) if isinstance(v, list) else v) for k, v in unc.items()}),
            truth=None if truth is None else TruthConfig(
                **{k: (tuple(v) if isinstance(v, list) else v) for k, v in truth.items()}),
            schemes=tuple(doc.get("schemes", ("proposed", "no_ramping"))),
            seeds=tuple(doc.get("seeds", (0,))),
            days=int(doc.get("days", 1)),
            out=doc.get("out", "out"),
            feas_tol=float(doc.get("tol_feas", 1e-7)),
            comp_tol=float(doc.get("tol_comp", 1e-6)),
            jobs=int(doc.get("jobs", 1)),
            req_fractions=tuple(doc.get("req_fractions", (0.0,))),
            ramping_cases={k: tuple(v) for k, v in doc.get("ramping_cases", {}).items()},
            ramping_groups={k: list(v) for k, v in doc.get("ramping_groups", {}).items()},
            withholding=float(doc.get("withholding", 0.2)),
            base_dir=base,
        )
    except TypeError as exc:
        raise ParseError(f"{origin}: {exc}") from None
    return cfg


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def write_csv(rows: list[dict], path, header: list[str] | None = None) -> None:
    import csv

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, restval="", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: csv_cell(v) for k, v in row.items()})


DISPATCH_HEADER = ["interval", "generator", "g", "rU", "rD"]


def dispatch_rows(horizon) -> list[dict]:
    vc = horizon.vcase
    return [{"interval": t + 1, "generator": gid, "g": float(horizon.g[i, t]),
             "rU": float(horizon.rU[i, t]), "rD": float(horizon.rD[i, t])}
            for t in range(horizon.T) for i, gid in enumerate(vc.gen_ids)]


def write_reports(out_dir, horizon, settlements: dict | None = None, outcome=None,
                  prefix: str = "") -> list[Path]:
    """Write dispatch, price and settlement files; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / f"{prefix}dispatch.csv"
    write_csv(dispatch_rows(horizon), p, DISPATCH_HEADER)
    written.append(p)
    for scheme, sched in horizon.prices.items():
        p = out / f"{prefix}prices_{scheme}.csv"
        p.write_text(sched.to_csv())
        written.append(p)
        p = out / f"{prefix}prices_{scheme}.json"
        p.write_text(sched.to_json() + "\n")
        written.append(p)
    for scheme, rep in (settlements or {}).items():
        p = out / f"{prefix}settlement_{scheme}.json"
        p.write_text(rep.to_json() + "\n")
        written.append(p)
        p = out / f"{prefix}settlement_{scheme}.csv"
        p.write_text(rep.to_csv())
        written.append(p)
    windows = [{"window": [t + 1 for t in r.window], "objective": r.objective,
                "scenarios": r.n_scenarios, "kkt": r.kkt, "identities": r.identities,
                "g": r.g, "rU": r.rU, "rD": r.rD} for r in horizon.windows]
    p = out / f"{prefix}windows.json"
    write_json(windows, p)
    written.append(p)
    if outcome is not None:
        p = out / f"{prefix}redispatch.json"
        write_json({"dU": outcome.dU, "dD": outcome.dD, "dd": outcome.dd, "spill": outcome.spill,
                    "cost": outcome.cost}, p)
        written.append(p)
    return written
