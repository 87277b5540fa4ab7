"""Scenario trajectories of load forecast errors and line outages.

Intervals are 0-based inside the package; files use 1-based interval ids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import DataError, GenerationError
from .grid import ValidatedCase, is_connected

logger = logging.getLogger(__name__)

MAX_RESAMPLE = 1000


@dataclass(frozen=True, eq=False)
class ScenarioTrajectory:
    """One path over a window.

    ``load_errors`` is ``(n_load, K)`` in MW and ``line_status`` is a boolean
    ``(n_line, K)`` in-service mask, where ``K`` is the window length.
    """

    id: Any
    probability: float
    load_errors: np.ndarray
    line_status: np.ndarray

    def outages_at(self, k: int) -> np.ndarray:
        return np.flatnonzero(~self.line_status[:, k])

    def restrict(self, positions: Sequence[int]) -> "ScenarioTrajectory":
        pos = list(positions)
        return ScenarioTrajectory(self.id, self.probability,
                                  _ro(self.load_errors[:, pos]), _ro(self.line_status[:, pos]))


def _ro(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    window: tuple
    trajectories: tuple = ()
    nominal_status: np.ndarray | None = None

    def __post_init__(self):
        probs = [s.probability for s in self.trajectories]
        if any(p < 0 or p > 1 for p in probs):
            raise DataError("scenario probabilities must lie in [0, 1]")
        if sum(probs) > 1 + 1e-9:
            raise DataError(f"scenario probabilities sum to {sum(probs)} > 1")
        ids = [s.id for s in self.trajectories]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate scenario ids")
        K = len(self.window)
        if K and list(self.window) != list(range(self.window[0], self.window[0] + K)):
            raise DataError("window intervals must be consecutive")
        for s in self.trajectories:
            if s.load_errors.shape[1] != K or s.line_status.shape[1] != K:
                raise DataError(f"scenario {s.id!r} does not span the window")

    def __len__(self):
        return len(self.trajectories)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.trajectories], dtype=float)

    def restrict(self, window: Sequence[int]) -> "ScenarioSet":
        """Trajectories cut to a sub-window (e.g. a shrinking window)."""
        window = tuple(window)
        pos = [self.window.index(t) for t in window]
        return ScenarioSet(window, tuple(s.restrict(pos) for s in self.trajectories),
                           self.nominal_status)

    def with_trajectory(self, traj: ScenarioTrajectory) -> "ScenarioSet":
        return ScenarioSet(self.window, self.trajectories + (traj,), self.nominal_status)

    def check(self, vcase: ValidatedCase) -> None:
        """Validate trajectories against a case: nonnegative demand and connectivity."""
        K = len(self.window)
        if self.window[0] < 0 or self.window[-1] >= vcase.T:
            raise DataError(f"window {self.window} outside the horizon")
        dhat = vcase.dhat[:, list(self.window)]
        for s in self.trajectories:
            if s.load_errors.shape != (vcase.n_load, K):
                raise DataError(f"scenario {s.id!r}: load_errors shape {s.load_errors.shape}")
            if s.line_status.shape != (vcase.n_line, K):
                raise DataError(f"scenario {s.id!r}: line_status shape {s.line_status.shape}")
            if np.any(dhat + s.load_errors < -1e-9):
                raise DataError(f"scenario {s.id!r}: negative post-error demand")
            for k in range(K):
                if not is_connected(vcase, s.line_status[:, k]):
                    raise DataError(f"scenario {s.id!r}: islanding line status at interval "
                                    f"{self.window[k] + 1}")

    def to_dict(self, vcase: ValidatedCase) -> dict:
        return scenario_set_to_dict(self, vcase)


@dataclass(frozen=True)
class UncertaintyConfig:
    """Scenario-generation settings.

    ``load_sigma_growth`` is the relative forecast-error variance per lead
    interval: the error at lead ``k`` has variance ``load_sigma_growth * k``
    times the squared forecast.
    """

    load_sigma_growth: float = 0.00036
    outage_rate_per_interval: float = 0.0
    repair_rate: float = 0.0
    scenario_count: int = 0
    seed: int = 0
    p_base: float = 0.0
    outage_lines: tuple | None = None

    def __post_init__(self):
        for name in ("outage_rate_per_interval", "repair_rate", "p_base"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise DataError(f"{name} must lie in [0, 1]")
        if self.scenario_count < 0:
            raise DataError("scenario_count must be nonnegative")
        if self.load_sigma_growth < 0:
            raise DataError("load_sigma_growth must be nonnegative")


@dataclass(frozen=True)
class TruthConfig:
    load_sigma: float = 0.04
    outage_rate_per_interval: float = 0.0
    repair_rate: float = 0.0
    outage_lines: tuple | None = None

    def __post_init__(self):
        if self.load_sigma < 0:
            raise DataError("load_sigma must be nonnegative")
        for name in ("outage_rate_per_interval", "repair_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise DataError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class RealizedPath:
    loads: np.ndarray
    line_status: np.ndarray

    def check(self, vcase: ValidatedCase) -> None:
        if self.loads.shape != (vcase.n_load, vcase.T):
            raise DataError("realized loads have the wrong shape")
        if np.any(self.loads < 0):
            raise DataError("realized loads must be nonnegative")
        for t in range(vcase.T):
            if not is_connected(vcase, self.line_status[:, t]):
                raise DataError(f"realized line status islands the network at interval {t + 1}")


def _line_subset(vcase: ValidatedCase, lines) -> np.ndarray:
    if lines is None:
        return np.arange(vcase.n_line)
    try:
        return np.array([vcase.line_pos[lid] for lid in lines], dtype=int)
    except KeyError as exc:
        raise DataError(f"unknown outage line {exc.args[0]!r}") from None


def _markov_path(rng, start: np.ndarray, steps: int, subset: np.ndarray,
                 outage_rate: float, repair_rate: float) -> np.ndarray:
    status = np.empty((start.size, steps), dtype=bool)
    state = start.copy()
    for k in range(steps):
        u = rng.random(subset.size)
        cur = state[subset]
        state[subset] = np.where(cur, u >= outage_rate, u < repair_rate)
        status[:, k] = state
    return status


def build_scenario_set(vcase: ValidatedCase, window: Sequence[int],
                       current_line_status=None, config: UncertaintyConfig | None = None,
                       seed=None) -> ScenarioSet:
    """Monte-Carlo scenario trajectories over ``window``.

    Each trajectory draws independent Gaussian load errors whose variance
    grows linearly with lead time, and a line-status path from a two-state
    Markov chain started at ``current_line_status``.  Draws that island the
    network are resampled.
    """
    config = config or UncertaintyConfig()
    window = tuple(int(t) for t in window)
    if not window:
        raise DataError("window must be nonempty")
    start = (vcase.all_in_service() if current_line_status is None
             else np.asarray(current_line_status, dtype=bool).copy())
    rng = np.random.default_rng(config.seed if seed is None else seed)
    S = config.scenario_count
    if S == 0:
        return ScenarioSet(window, (), None)

    K = len(window)
    dhat = vcase.dhat[:, list(window)]
    sigma = dhat * np.sqrt(config.load_sigma_growth * np.arange(1, K + 1))[None, :]
    subset = _line_subset(vcase, config.outage_lines)
    eps = (1.0 - config.p_base) / S
    trajs = []
    for s in range(S):
        err = sigma * rng.standard_normal(dhat.shape)
        err = np.maximum(err, -dhat)
        for attempt in range(MAX_RESAMPLE):
            status = _markov_path(rng, start, K, subset, config.outage_rate_per_interval,
                                  config.repair_rate)
            if all(is_connected(vcase, status[:, k]) for k in range(K)):
                break
        else:
            raise GenerationError(f"line-status resampling failed {MAX_RESAMPLE} times")
        trajs.append(ScenarioTrajectory(s + 1, eps, _ro(err), _ro(status)))
    return ScenarioSet(window, tuple(trajs), None)


def make_manual_scenarios(spec: dict, vcase: ValidatedCase | None = None) -> ScenarioSet:
    """Build a scripted :class:`ScenarioSet` from a plain mapping.

    ``spec`` holds ``window`` (1-based interval ids) and ``scenarios``, each
    with ``id``, ``probability``, ``load_errors`` ({load id: [MW per
    interval]}) and ``outages`` ({1-based interval: [line ids]}).
    """
    if not spec:
        return ScenarioSet((), (), None)
    try:
        window = tuple(int(t) - 1 for t in spec["window"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"scenario spec needs an integer 'window' list: {exc}") from None
    K = len(window)
    n_load = vcase.n_load if vcase is not None else None
    n_line = vcase.n_line if vcase is not None else None
    trajs = []
    for raw in spec.get("scenarios", []):
        sid = raw.get("id")
        prob = float(raw.get("probability", 0.0))
        errs_in = raw.get("load_errors", {}) or {}
        outs_in = raw.get("outages", {}) or {}
        if vcase is None:
            raise DataError("a case is required to index scenario loads and lines")
        err = np.zeros((n_load, K))
        for lid, vals in errs_in.items():
            key = _match_id(lid, vcase.load_pos)
            if key is None:
                raise DataError(f"scenario {sid!r}: unknown load {lid!r}")
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (K,):
                raise DataError(f"scenario {sid!r}: load {lid!r} errors must have length {K}")
            err[vcase.load_pos[key]] = vals
        status = np.ones((n_line, K), dtype=bool)
        for t_raw, lines in outs_in.items():
            t = int(t_raw) - 1
            if t not in window:
                raise DataError(f"scenario {sid!r}: outage interval {t_raw} outside the window")
            for lid in lines:
                key = _match_id(lid, vcase.line_pos)
                if key is None:
                    raise DataError(f"scenario {sid!r}: unknown line {lid!r}")
                status[vcase.line_pos[key], window.index(t)] = False
        trajs.append(ScenarioTrajectory(sid, prob, _ro(err), _ro(status)))
    nominal = spec.get("nominal_outages")
    nom = None
    if vcase is not None:
        nom = vcase.all_in_service().copy()
        for lid in nominal or []:
            nom[vcase.line_pos[_match_id(lid, vcase.line_pos)]] = False
        nom = _ro(nom)
    sset = ScenarioSet(window, tuple(trajs), nom)
    if vcase is not None:
        sset.check(vcase)
    return sset


def _match_id(raw, table: dict):
    if raw in table:
        return raw
    for key in table:
        if str(key) == str(raw):
            return key
    return None


def scenario_set_to_dict(sset: ScenarioSet, vcase: ValidatedCase) -> dict:
    load_ids, line_ids = vcase.load_ids, vcase.line_ids
    out = {"window": [t + 1 for t in sset.window], "scenarios": []}
    if sset.nominal_status is not None and not np.all(sset.nominal_status):
        out["nominal_outages"] = [line_ids[j] for j in np.flatnonzero(~sset.nominal_status)]
    for s in sset.trajectories:
        outages = {}
        for k, t in enumerate(sset.window):
            down = s.outages_at(k)
            if down.size:
                outages[str(t + 1)] = [line_ids[j] for j in down]
        out["scenarios"].append({
            "id": s.id,
            "probability": s.probability,
            "load_errors": {str(load_ids[li]): s.load_errors[li].tolist()
                            for li in range(len(load_ids)) if np.any(s.load_errors[li] != 0)},
            "outages": outages,
        })
    return out


def realize_day(vcase: ValidatedCase, truth_config: TruthConfig | None = None,
                seed=None) -> RealizedPath:
    """Sample one truth path over the whole horizon.

    Loads get independent relative Gaussian errors with standard deviation
    ``load_sigma``; line status follows the Markov chain from an all-in-service
    start, one transition per interval.
    """
    truth_config = truth_config or TruthConfig()
    rng = np.random.default_rng(seed)
    T = vcase.T
    loads = vcase.dhat * (1.0 + truth_config.load_sigma * rng.standard_normal(vcase.dhat.shape))
    loads = np.maximum(loads, 0.0)
    subset = _line_subset(vcase, truth_config.outage_lines)
    for attempt in range(MAX_RESAMPLE):
        status = _markov_path(rng, vcase.all_in_service(), T, subset,
                              truth_config.outage_rate_per_interval, truth_config.repair_rate)
        if all(is_connected(vcase, status[:, t]) for t in range(T)):
            break
    else:
        raise GenerationError(f"line-status resampling failed {MAX_RESAMPLE} times")
    return RealizedPath(_ro(loads), _ro(status))


def forecast_path(vcase: ValidatedCase) -> RealizedPath:
    return RealizedPath(_ro(vcase.dhat), _ro(np.ones((vcase.n_line, vcase.T), dtype=bool)))


# Scenario sources feed one ScenarioSet per window to the rolling driver.
ScenarioSource = Callable[[ValidatedCase, tuple, np.ndarray], ScenarioSet]


@dataclass
class ScriptedScenarios:
    """Scenario sets keyed by window start; missing windows inherit by restriction."""

    sets: dict = field(default_factory=dict)

    def __call__(self, vcase: ValidatedCase, window: tuple, prev_status=None) -> ScenarioSet:
        start = window[0]
        if start in self.sets:
            sset = self.sets[start]
            if tuple(sset.window) != tuple(window):
                sset = sset.restrict(window)
            return sset
        for s0 in sorted(self.sets, reverse=True):
            parent = self.sets[s0]
            if s0 < start and set(window) <= set(parent.window):
                return parent.restrict(window)
        return ScenarioSet(tuple(window), (), None)


@dataclass
class GeneratedScenarios:
    """Draw a fresh scenario set per window, conditioned on the last observed status."""

    config: UncertaintyConfig
    seed: int | None = None

    def __call__(self, vcase: ValidatedCase, window: tuple, prev_status=None) -> ScenarioSet:
        base = self.config.seed if self.seed is None else self.seed
        return build_scenario_set(vcase, window, prev_status, self.config,
                                  seed=[base, window[0]])


def no_scenarios(vcase: ValidatedCase, window: tuple, prev_status=None) -> ScenarioSet:
    return ScenarioSet(tuple(window), (), None)
