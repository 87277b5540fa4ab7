"""DC network, generator and load data, and shift-factor computation.

Flows are positive in the ``from_bus -> to_bus`` direction.  A PTDF entry
``ptdf[l, b]`` is the flow on line ``l`` per MW injected at bus ``b`` and
withdrawn at the slack bus.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Hashable, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DataError, IslandingError, SheddingPriceWarning

logger = logging.getLogger(__name__)

BusId = Hashable


@dataclass(frozen=True)
class Line:
    id: Hashable
    from_bus: BusId
    to_bus: BusId
    susceptance: float
    capacity_f: float
    contingency_capacity: float | None = None

    @property
    def post_event_capacity(self) -> float:
        if self.contingency_capacity is None:
            return self.capacity_f
        return self.contingency_capacity


@dataclass(frozen=True)
class Generator:
    """Bid and operating limits of one generator.

    Every per-interval field is a sequence of length ``horizon_T``.  Ramp
    limits are MW per interval transition.
    """

    id: Hashable
    bus: BusId
    cost_energy: Sequence[float]
    cost_res_up: Sequence[float]
    cost_res_dn: Sequence[float]
    g_min: Sequence[float]
    g_max: Sequence[float]
    res_up_cap: Sequence[float]
    res_dn_cap: Sequence[float]
    ramp_up: Sequence[float]
    ramp_dn: Sequence[float]
    initial_output: float


@dataclass(frozen=True)
class LoadPoint:
    id: Hashable
    bus: BusId
    forecast: Sequence[float]
    shedding_price: Sequence[float]


@dataclass(frozen=True)
class GridCase:
    buses: Sequence[BusId]
    lines: Sequence[Line]
    generators: Sequence[Generator]
    loads: Sequence[LoadPoint]
    horizon_T: int
    window_W: int
    interval_hours: float = 1.0
    slack_bus: BusId | None = None
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def replace_generator(self, gen: Generator) -> "GridCase":
        gens = [gen if g.id == gen.id else g for g in self.generators]
        return replace(self, generators=tuple(gens))


@dataclass(frozen=True)
class ShiftFactors:
    """Shift factors of one topology.

    ``ptdf`` has one row per line of the case (outaged lines carry zero rows)
    so that scenario duals can be stored on a common line axis; ``line_index``
    lists the ids of the in-service lines.
    """

    ptdf: np.ndarray
    S_G: np.ndarray
    S_D: np.ndarray
    line_index: tuple
    in_service: np.ndarray

    def flows(self, bus_injection: np.ndarray) -> np.ndarray:
        return self.ptdf @ bus_injection


def _as_float_array(values, name: str, T: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(T, float(arr))
    if arr.shape != (T,):
        raise DataError(f"{name} must have length horizon_T={T}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ValidatedCase:
    """A checked :class:`GridCase` with dense, read-only arrays.

    Generator arrays are shaped ``(n_gen, T)``, load arrays ``(n_load, T)``.
    """

    case: GridCase
    bus_pos: dict
    gen_pos: dict
    load_pos: dict
    line_pos: dict
    slack_pos: int
    gen_bus: np.ndarray
    load_bus: np.ndarray
    line_from: np.ndarray
    line_to: np.ndarray
    susceptance: np.ndarray
    cap_f: np.ndarray
    cap_post: np.ndarray
    cg: np.ndarray
    cu: np.ndarray
    cd: np.ndarray
    gmin: np.ndarray
    gmax: np.ndarray
    ru_cap: np.ndarray
    rd_cap: np.ndarray
    ramp_up: np.ndarray
    ramp_dn: np.ndarray
    g0: np.ndarray
    dhat: np.ndarray
    cl: np.ndarray
    _ptdf_cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return self.case.horizon_T

    @property
    def W(self) -> int:
        return self.case.window_W

    @property
    def hours(self) -> float:
        return self.case.interval_hours

    @property
    def n_bus(self) -> int:
        return len(self.bus_pos)

    @property
    def n_gen(self) -> int:
        return len(self.gen_pos)

    @property
    def n_load(self) -> int:
        return len(self.load_pos)

    @property
    def n_line(self) -> int:
        return len(self.line_pos)

    @property
    def gen_ids(self) -> list:
        return [g.id for g in self.case.generators]

    @property
    def load_ids(self) -> list:
        return [d.id for d in self.case.loads]

    @property
    def line_ids(self) -> list:
        return [ln.id for ln in self.case.lines]

    def all_in_service(self) -> np.ndarray:
        return np.ones(self.n_line, dtype=bool)


def _connected(n_bus: int, frm: np.ndarray, to: np.ndarray, mask: np.ndarray):
    rows, cols = frm[mask], to[mask]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_bus, n_bus))
    return connected_components(graph, directed=False)


def validate_case(case: GridCase, warn_shedding: bool = True) -> ValidatedCase:
    """Check every case invariant and freeze index maps.

    Raises :class:`DataError` naming the first violated invariant.
    """
    T = int(case.horizon_T)
    if T < 1:
        raise DataError("horizon_T must be at least 1")
    if int(case.window_W) < 1:
        raise DataError("window_W must be at least 1")
    if not case.interval_hours > 0:
        raise DataError("interval_hours must be positive")

    bus_pos = {}
    for b in case.buses:
        if b in bus_pos:
            raise DataError(f"duplicate bus id {b!r}")
        bus_pos[b] = len(bus_pos)
    if not bus_pos:
        raise DataError("case has no buses")
    slack = case.slack_bus if case.slack_bus is not None else case.buses[0]
    if slack not in bus_pos:
        raise DataError(f"slack bus {slack!r} is not a bus of the case")

    def _unique(items, kind):
        pos = {}
        for item in items:
            if item.id in pos:
                raise DataError(f"duplicate {kind} id {item.id!r}")
            pos[item.id] = len(pos)
        return pos

    line_pos = _unique(case.lines, "line")
    gen_pos = _unique(case.generators, "generator")
    load_pos = _unique(case.loads, "load")

    frm, to, sus, cap, cap_post = [], [], [], [], []
    for li, ln in enumerate(case.lines):
        for key, end in (("from_bus", ln.from_bus), ("to_bus", ln.to_bus)):
            if end not in bus_pos:
                raise DataError(f"line {ln.id!r} references unknown bus {end!r}",
                                record=f"lines[{li}].{key}")
        if ln.from_bus == ln.to_bus:
            raise DataError(f"line {ln.id!r} is a self-loop")
        if not ln.susceptance > 0:
            raise DataError(f"line {ln.id!r}: susceptance must be positive")
        if not ln.capacity_f > 0:
            raise DataError(f"line {ln.id!r}: capacity_f must be positive")
        if ln.post_event_capacity < ln.capacity_f:
            raise DataError(f"line {ln.id!r}: contingency_capacity below capacity_f")
        frm.append(bus_pos[ln.from_bus])
        to.append(bus_pos[ln.to_bus])
        sus.append(float(ln.susceptance))
        cap.append(float(ln.capacity_f))
        cap_post.append(float(ln.post_event_capacity))

    G = len(gen_pos)
    arrays = {k: np.zeros((G, T)) for k in
              ("cg", "cu", "cd", "gmin", "gmax", "ru_cap", "rd_cap", "ramp_up", "ramp_dn")}
    g0 = np.zeros(G)
    gen_bus = np.zeros(G, dtype=int)
    for gi, gen in enumerate(case.generators):
        if gen.bus not in bus_pos:
            raise DataError(f"generator {gen.id!r} references unknown bus {gen.bus!r}",
                            record=f"generators[{gi}].bus")
        gen_bus[gi] = bus_pos[gen.bus]
        for key, attr in (("cg", "cost_energy"), ("cu", "cost_res_up"), ("cd", "cost_res_dn"),
                          ("gmin", "g_min"), ("gmax", "g_max"), ("ru_cap", "res_up_cap"),
                          ("rd_cap", "res_dn_cap"), ("ramp_up", "ramp_up"), ("ramp_dn", "ramp_dn")):
            arrays[key][gi] = _as_float_array(getattr(gen, attr), f"generator {gen.id!r} {attr}", T)
        if np.any(arrays["gmin"][gi] > arrays["gmax"][gi]):
            raise DataError(f"generator {gen.id!r}: g_min exceeds g_max")
        for key in ("ru_cap", "rd_cap", "ramp_up", "ramp_dn"):
            if np.any(arrays[key][gi] < 0):
                raise DataError(f"generator {gen.id!r}: {key} must be nonnegative")
        g0[gi] = float(gen.initial_output)
        if not (arrays["gmin"][gi, 0] - 1e-9 <= g0[gi] <= arrays["gmax"][gi, 0] + 1e-9):
            raise DataError(f"generator {gen.id!r}: initial_output outside [g_min, g_max]")

    L = len(load_pos)
    dhat = np.zeros((L, T))
    cl = np.zeros((L, T))
    load_bus = np.zeros(L, dtype=int)
    for li, load in enumerate(case.loads):
        if load.bus not in bus_pos:
            raise DataError(f"load {load.id!r} references unknown bus {load.bus!r}",
                            record=f"loads[{li}].bus")
        load_bus[li] = bus_pos[load.bus]
        dhat[li] = _as_float_array(load.forecast, f"load {load.id!r} forecast", T)
        cl[li] = _as_float_array(load.shedding_price, f"load {load.id!r} shedding_price", T)
        if np.any(dhat[li] < 0):
            raise DataError(f"load {load.id!r}: forecast must be nonnegative")
        if np.any(cl[li] < 0):
            raise DataError(f"load {load.id!r}: shedding_price must be nonnegative")

    if warn_shedding and G and L and np.any(cl.min(axis=0) <= arrays["cg"].max(axis=0)):
        warnings.warn("some shedding price does not exceed every energy bid",
                      SheddingPriceWarning, stacklevel=2)

    frm_a, to_a = np.asarray(frm, dtype=int), np.asarray(to, dtype=int)
    n_comp, _ = _connected(len(bus_pos), frm_a, to_a, np.ones(len(frm_a), dtype=bool))
    if n_comp != 1:
        raise DataError("network not connected")

    def _ro(a):
        a = np.asarray(a)
        a.setflags(write=False)
        return a

    g0.setflags(write=False)
    return ValidatedCase(
        case=case,
        bus_pos=bus_pos,
        gen_pos=gen_pos,
        load_pos=load_pos,
        line_pos=line_pos,
        slack_pos=bus_pos[slack],
        gen_bus=_ro(gen_bus),
        load_bus=_ro(load_bus),
        line_from=_ro(frm_a),
        line_to=_ro(to_a),
        susceptance=_ro(np.asarray(sus, dtype=float)),
        cap_f=_ro(np.asarray(cap, dtype=float)),
        cap_post=_ro(np.asarray(cap_post, dtype=float)),
        g0=g0,
        dhat=_ro(dhat),
        cl=_ro(cl),
        **{k: _ro(v) for k, v in arrays.items()},
    )


def _status_mask(vcase: ValidatedCase, in_service: Any) -> np.ndarray:
    if in_service is None:
        return vcase.all_in_service()
    mask = np.asarray(in_service, dtype=bool)
    if mask.shape != (vcase.n_line,):
        raise DataError(f"line-status mask must have length {vcase.n_line}")
    return mask


def compute_ptdf(vcase: ValidatedCase, in_service: Any = None) -> ShiftFactors:
    """Shift factors for the topology given by the ``in_service`` mask.

    Buses cut off from the slack island are tolerated only when they carry no
    generator or load; otherwise :class:`IslandingError` is raised.
    """
    mask = _status_mask(vcase, in_service)
    key = mask.tobytes()
    cached = vcase._ptdf_cache.get(key)
    if cached is not None:
        return cached

    n_bus, n_line = vcase.n_bus, vcase.n_line
    _, labels = _connected(n_bus, vcase.line_from, vcase.line_to, mask)
    island = labels == labels[vcase.slack_pos]
    used = np.zeros(n_bus, dtype=bool)
    used[vcase.gen_bus] = True
    used[vcase.load_bus] = True
    stranded = np.flatnonzero(used & ~island)
    if stranded.size:
        names = [b for b, p in vcase.bus_pos.items() if p in set(stranded.tolist())]
        raise IslandingError(f"line outage islands bus(es) {names}")

    live = mask & island[vcase.line_from] & island[vcase.line_to]
    idx = np.flatnonzero(live)
    frm, to, b = vcase.line_from[idx], vcase.line_to[idx], vcase.susceptance[idx]

    keep = np.flatnonzero(island)
    keep = keep[keep != vcase.slack_pos]
    ptdf = np.zeros((n_line, n_bus))
    if keep.size and idx.size:
        # incidence restricted to the slack island, slack column dropped
        A = np.zeros((idx.size, n_bus))
        A[np.arange(idx.size), frm] = 1.0
        A[np.arange(idx.size), to] = -1.0
        Bf = b[:, None] * A
        Bbus = A.T @ Bf
        red = np.ix_(keep, keep)
        theta = np.linalg.solve(Bbus[red], np.eye(keep.size))
        ptdf[np.ix_(idx, keep)] = Bf[:, keep] @ theta
    ptdf[np.abs(ptdf) < 1e-13] = 0.0
    ptdf.setflags(write=False)

    S_G = ptdf[:, vcase.gen_bus]
    S_D = ptdf[:, vcase.load_bus]
    S_G.setflags(write=False)
    S_D.setflags(write=False)
    mask_ro = mask.copy()
    mask_ro.setflags(write=False)
    line_ids = vcase.line_ids
    sf = ShiftFactors(ptdf=ptdf, S_G=S_G, S_D=S_D,
                      line_index=tuple(line_ids[k] for k in np.flatnonzero(mask)),
                      in_service=mask_ro)
    vcase._ptdf_cache[key] = sf
    return sf


def outage_mask(vcase: ValidatedCase, outage_set: Iterable = ()) -> np.ndarray:
    mask = vcase.all_in_service().copy()
    for lid in outage_set:
        if lid not in vcase.line_pos:
            raise DataError(f"unknown line id {lid!r} in outage set")
        mask[vcase.line_pos[lid]] = False
    return mask


def apply_contingency(vcase: ValidatedCase, outage_set: Iterable = ()):
    """Shift factors and line ratings after removing ``outage_set``.

    Returns ``(ShiftFactors, capacities)`` where capacities are indexed on the
    full line axis (zero for outaged lines).  An empty outage set returns the
    nominal ratings; otherwise the post-event ratings apply.
    """
    outage_set = list(outage_set)
    mask = outage_mask(vcase, outage_set)
    sf = compute_ptdf(vcase, mask)
    caps = np.where(mask, vcase.cap_post if outage_set else vcase.cap_f, 0.0)
    return sf, caps


def is_connected(vcase: ValidatedCase, in_service: Any) -> bool:
    try:
        compute_ptdf(vcase, in_service)
    except IslandingError:
        return False
    return True
