"""Tagged LP assembly and the solver adapter.

Every row and column carries a tag tuple such as ``("bal0", k)`` so that a
solution can be mapped back onto named model entities.  Duals are reported
under one sign convention:

* ``<=`` and ``>=`` rows: nonnegative multiplier of the violation,
* ``==`` rows: derivative of the optimal objective w.r.t. the right-hand side,
* variable bounds: nonnegative multipliers for the lower and upper bound.

With this convention the Lagrangian stationarity reads
``c + A_le' y_le - A_ge' y_ge - A_eq' y_eq - z_lo + z_up = 0``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import BuildError, InfeasibleError, SolverError, UnboundedError

logger = logging.getLogger(__name__)

LE, GE, EQ = "<=", ">=", "=="


@dataclass(frozen=True)
class SolveTolerances:
    feas_tol: float = 1e-7
    comp_tol: float = 1e-6
    solver_tol: float = 1e-9
    method: str = "highs-ds"


class LpBuilder:
    """Incrementally collects columns and rows."""

    def __init__(self):
        self.col_tags: list[tuple] = []
        self.col_index: dict[tuple, int] = {}
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.cost: list[float] = []
        self.row_tags: list[tuple] = []
        self.row_index: dict[tuple, int] = {}
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self._ri: list[int] = []
        self._ci: list[int] = []
        self._v: list[float] = []

    def add_var(self, tag: tuple, lb: float = 0.0, ub: float = np.inf, cost: float = 0.0) -> int:
        if tag in self.col_index:
            raise BuildError(f"duplicate column tag {tag}")
        if lb > ub:
            raise BuildError(f"column {tag}: lower bound {lb} exceeds upper bound {ub}")
        j = len(self.col_tags)
        self.col_tags.append(tag)
        self.col_index[tag] = j
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.cost.append(float(cost))
        return j

    def add_cost(self, j: int, value: float) -> None:
        self.cost[j] += float(value)

    def add_row(self, tag: tuple, cols, vals, sense: str, rhs: float) -> int:
        if tag in self.row_index:
            raise BuildError(f"duplicate row tag {tag}")
        if sense not in (LE, GE, EQ):
            raise BuildError(f"row {tag}: unknown sense {sense!r}")
        cols = list(cols)
        vals = list(vals)
        if len(cols) != len(vals):
            raise BuildError(f"row {tag}: {len(cols)} columns but {len(vals)} coefficients")
        i = len(self.row_tags)
        self.row_tags.append(tag)
        self.row_index[tag] = i
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self._ri.extend([i] * len(cols))
        self._ci.extend(cols)
        self._v.extend(float(v) for v in vals)
        return i

    def add_vars(self, kind: str, keys, lb, ub, cost) -> np.ndarray:
        """Add one column per key; bounds and costs broadcast over ``keys``."""
        keys = list(keys)
        n = len(keys)
        lb = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ub = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        cost = np.broadcast_to(np.asarray(cost, dtype=float), (n,))
        if np.any(lb > ub):
            bad = keys[int(np.flatnonzero(lb > ub)[0])]
            raise BuildError(f"column {(kind, *bad)}: lower bound exceeds upper bound")
        start = len(self.col_tags)
        for off, key in enumerate(keys):
            tag = (kind, *key)
            if tag in self.col_index:
                raise BuildError(f"duplicate column tag {tag}")
            self.col_index[tag] = start + off
            self.col_tags.append(tag)
        self.lb.extend(lb.tolist())
        self.ub.extend(ub.tolist())
        self.cost.extend(cost.tolist())
        return np.arange(start, start + n)

    def add_rows(self, kind: str, keys, local_rows, cols, vals, sense: str, rhs) -> np.ndarray:
        """Add one row per key from COO triplets whose row indices are local to the block."""
        keys = list(keys)
        n = len(keys)
        if sense not in (LE, GE, EQ):
            raise BuildError(f"unknown sense {sense!r}")
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (n,))
        start = len(self.row_tags)
        for off, key in enumerate(keys):
            tag = (kind, *key)
            if tag in self.row_index:
                raise BuildError(f"duplicate row tag {tag}")
            self.row_index[tag] = start + off
            self.row_tags.append(tag)
        self.senses.extend([sense] * n)
        self.rhs.extend(rhs.tolist())
        local_rows = np.asarray(local_rows, dtype=int)
        if local_rows.size and (local_rows.min() < 0 or local_rows.max() >= n):
            raise BuildError(f"{kind}: row index outside the block")
        self._ri.extend((local_rows + start).tolist())
        self._ci.extend(np.asarray(cols, dtype=int).tolist())
        self._v.extend(np.asarray(vals, dtype=float).tolist())
        return np.arange(start, start + n)

    def build(self) -> "LpStandardForm":
        n, m = len(self.col_tags), len(self.row_tags)
        A = sp.csr_matrix((self._v, (self._ri, self._ci)), shape=(m, n))
        A.sum_duplicates()
        return LpStandardForm(
            A=A,
            senses=np.array(self.senses, dtype=object),
            rhs=np.array(self.rhs, dtype=float),
            c=np.array(self.cost, dtype=float),
            lb=np.array(self.lb, dtype=float),
            ub=np.array(self.ub, dtype=float),
            col_tags=tuple(self.col_tags),
            row_tags=tuple(self.row_tags),
            col_index=dict(self.col_index),
            row_index=dict(self.row_index),
        )


@dataclass
class LpStandardForm:
    A: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    col_tags: tuple
    row_tags: tuple
    col_index: dict
    row_index: dict
    meta: dict = field(default_factory=dict)

    @property
    def n_cols(self) -> int:
        return len(self.col_tags)

    @property
    def n_rows(self) -> int:
        return len(self.row_tags)

    def rows_with(self, kind: str) -> list:
        return [t for t in self.row_tags if t[0] == kind]

    def cols_with(self, kind: str) -> list:
        return [t for t in self.col_tags if t[0] == kind]


@dataclass
class LpResult:
    status: str
    x: np.ndarray
    objective: float
    row_dual: np.ndarray
    lower_dual: np.ndarray
    upper_dual: np.ndarray
    message: str = ""


def lp_solve(lp: LpStandardForm, tol: SolveTolerances | None = None) -> LpResult:
    """Solve ``min c'x`` over the tagged rows and bounds.

    Returns an :class:`LpResult` whose status is ``"optimal"``,
    ``"infeasible"`` or ``"unbounded"``; any other backend outcome raises
    :class:`SolverError`.
    """
    tol = tol or SolveTolerances()
    le = np.flatnonzero(lp.senses == LE)
    ge = np.flatnonzero(lp.senses == GE)
    eq = np.flatnonzero(lp.senses == EQ)
    ub_rows = np.concatenate([le, ge])
    sign = np.concatenate([np.ones(le.size), -np.ones(ge.size)])
    A_ub = sp.diags(sign) @ lp.A[ub_rows] if ub_rows.size else None
    b_ub = sign * lp.rhs[ub_rows] if ub_rows.size else None
    A_eq = lp.A[eq] if eq.size else None
    b_eq = lp.rhs[eq] if eq.size else None
    bounds = np.column_stack([
        np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
        np.where(np.isfinite(lp.ub), lp.ub, np.inf),
    ])
    options = {
        "primal_feasibility_tolerance": tol.solver_tol,
        "dual_feasibility_tolerance": tol.solver_tol,
        "presolve": True,
    }
    n = lp.n_cols
    if n == 0:
        return LpResult("optimal", np.zeros(0), 0.0, np.zeros(lp.n_rows), np.zeros(0), np.zeros(0))
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method=tol.method, options=options)
    if res.status == 2:
        return LpResult("infeasible", np.full(n, np.nan), np.nan,
                        np.full(lp.n_rows, np.nan), np.full(n, np.nan), np.full(n, np.nan), res.message)
    if res.status == 3:
        return LpResult("unbounded", np.full(n, np.nan), -np.inf,
                        np.full(lp.n_rows, np.nan), np.full(n, np.nan), np.full(n, np.nan), res.message)
    if res.status != 0:
        raise SolverError(f"LP backend failed: {res.message}", status=res.status)

    row_dual = np.zeros(lp.n_rows)
    if ub_rows.size:
        row_dual[ub_rows] = -np.asarray(res.ineqlin.marginals)
    if eq.size:
        row_dual[eq] = np.asarray(res.eqlin.marginals)
    return LpResult(
        status="optimal",
        x=np.asarray(res.x, dtype=float),
        objective=float(res.fun),
        row_dual=row_dual,
        lower_dual=np.asarray(res.lower.marginals, dtype=float),
        upper_dual=-np.asarray(res.upper.marginals, dtype=float),
        message=res.message,
    )


def solve_or_raise(lp: LpStandardForm, tol: SolveTolerances | None = None) -> LpResult:
    res = lp_solve(lp, tol)
    if res.status == "infeasible":
        raise InfeasibleError("LP is infeasible", status=res.status)
    if res.status == "unbounded":
        raise UnboundedError("LP is unbounded (check for negative cost data)", status=res.status)
    return res


def kkt_report(lp: LpStandardForm, res: LpResult) -> dict:
    """Primal feasibility, dual sign, stationarity and complementarity residuals."""
    x = res.x
    Ax = lp.A @ x
    y = res.row_dual
    le = lp.senses == LE
    ge = lp.senses == GE
    eq = lp.senses == EQ
    viol = np.zeros(lp.n_rows)
    viol[le] = np.maximum(Ax[le] - lp.rhs[le], 0)
    viol[ge] = np.maximum(lp.rhs[ge] - Ax[ge], 0)
    viol[eq] = np.abs(Ax[eq] - lp.rhs[eq])
    bound_viol = np.maximum(np.maximum(lp.lb - x, x - lp.ub), 0)
    signed = np.where(le, y, -y)
    stat = lp.c + lp.A.T @ signed - res.lower_dual + res.upper_dual
    slack = np.where(le, lp.rhs - Ax, np.where(ge, Ax - lp.rhs, 0.0))
    comp_rows = np.abs(np.where(eq, 0.0, y * slack))
    fin_lo = np.isfinite(lp.lb)
    fin_up = np.isfinite(lp.ub)
    comp_lo = np.abs(res.lower_dual * np.where(fin_lo, x - np.where(fin_lo, lp.lb, 0), 0))
    comp_up = np.abs(res.upper_dual * np.where(fin_up, np.where(fin_up, lp.ub, 0) - x, 0))
    neg = np.concatenate([np.minimum(y[~eq], 0), np.minimum(res.lower_dual, 0),
                          np.minimum(res.upper_dual, 0)])

    def _max(a):
        return float(np.max(np.abs(a))) if np.size(a) else 0.0

    return {
        "primal": max(_max(viol), _max(bound_viol)),
        "dual_sign": _max(neg),
        "stationarity": _max(stat),
        "complementarity": max(_max(comp_rows), _max(comp_lo), _max(comp_up)),
    }


_NAME_RE = re.compile(r"[^A-Za-z0-9_.]")


def tag_name(tag: tuple) -> str:
    return "_".join(_NAME_RE.sub("_", str(p)) for p in tag)


def write_lp_file(lp: LpStandardForm, path) -> None:
    """Dump the LP in CPLEX LP text format using tag-derived names."""
    cnames = [tag_name(t) for t in lp.col_tags]
    rnames = [tag_name(t) for t in lp.row_tags]

    def _terms(idx, vals):
        parts = []
        for j, v in zip(idx, vals):
            if v == 0:
                continue
            parts.append(f"{'+' if v >= 0 else '-'} {abs(v):.17g} {cnames[j]}")
        return " ".join(parts) if parts else "0 " + (cnames[0] if cnames else "")

    lines = ["\\ rollclear window LP", "Minimize", " obj: " + _terms(range(lp.n_cols), lp.c),
             "Subject To"]
    A = lp.A.tocsr()
    ops = {LE: "<=", GE: ">=", EQ: "="}
    for i in range(lp.n_rows):
        row = A.getrow(i)
        lines.append(f" {rnames[i]}: {_terms(row.indices, row.data)} {ops[lp.senses[i]]} {lp.rhs[i]:.17g}")
    lines.append("Bounds")
    for j in range(lp.n_cols):
        lo, hi = lp.lb[j], lp.ub[j]
        lo_s = "-inf" if not np.isfinite(lo) else f"{lo:.17g}"
        hi_s = "+inf" if not np.isfinite(hi) else f"{hi:.17g}"
        lines.append(f" {lo_s} <= {cnames[j]} <= {hi_s}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
