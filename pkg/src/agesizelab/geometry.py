"""Control-support geometry and backward characteristic tracing.

Transport moves age and size at unit speed, so looking backward from a
point (a, s) at time t the trajectory is the straight line
(a + e, s + e) at time t - e, for elapsed e >= 0.  A trace terminates at
the first of four events: the (a, s) coordinates enter the support's
cross-section (the point is observable there), the size coordinate
reaches the absorbing boundary s = S (the dual variable vanishes there),
the age coordinate reaches a = A (the trajectory is reborn through the
renewal condition and restarts at age zero over every admissible newborn
size), or the elapsed time exhausts t.

All event times are computed in closed form; a dense sampling oracle in
the test-suite cross-checks them.  These traces give an executable
account of which horizons make every point of the domain observable,
which is what the minimal control-time formulas summarize.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError
from .model import PopulationParams

__all__ = [
    "BoxSupport",
    "ObliqueSupport",
    "TimeConstants",
    "Threshold",
    "FateKind",
    "CharFate",
    "CoverageReport",
    "time_constants",
    "control_time_threshold",
    "classify_region",
    "trace_backward_characteristic",
    "fate_is_covered",
    "coverage_report",
]


def _check_omega(omega):
    omega = tuple(tuple(float(v) for v in pair) for pair in omega)
    for lo, hi in omega:
        if not lo < hi:
            raise ValueError(f"spatial patch interval ({lo}, {hi}) is empty")
    return omega


@dataclass(frozen=True)
class BoxSupport:
    """Axis-aligned control region: omega x (a1, a2) x (s1, s2)."""

    a1: float
    a2: float
    s1: float
    s2: float
    omega: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        if not 0 <= self.a1 < self.a2:
            raise ValueError("need 0 <= a1 < a2")
        if not 0 <= self.s1 < self.s2:
            raise ValueError("need 0 <= s1 < s2")
        object.__setattr__(self, "omega", _check_omega(self.omega))

    def membership(self, a: float, s: float) -> bool:
        """Exact (grid-free) membership of the (a, s) cross-section."""
        return self.a1 < a < self.a2 and self.s1 < s < self.s2

    def entering_elapsed(self, a: float, s: float) -> float:
        """Infimum of elapsed times at which (a + e, s + e) is inside.

        Returns ``inf`` when the diagonal ray never meets the box.
        """
        lo = max(self.a1 - a, self.s1 - s, 0.0)
        hi = min(self.a2 - a, self.s2 - s)
        return lo if lo < hi else np.inf


@dataclass(frozen=True)
class ObliqueSupport:
    """Control region following individuals: ages (a1, a2) within the
    band a - a0 < s < a + s_e.

    The band constraint is invariant along characteristics (s - a is
    conserved), so a trajectory is either always or never inside the
    band; only the age window has to be reached.
    """

    a1: float
    a2: float
    a0: float
    s_e: float
    omega: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        if not 0 <= self.a1 < self.a2:
            raise ValueError("need 0 <= a1 < a2")
        if self.s_e <= 0:
            raise ValueError("need s_e > 0")
        object.__setattr__(self, "omega", _check_omega(self.omega))

    def membership(self, a: float, s: float) -> bool:
        return self.a1 < a < self.a2 and (a - self.a0) < s < (a + self.s_e)

    def entering_elapsed(self, a: float, s: float) -> float:
        offset = s - a
        if not (-self.a0 < offset < self.s_e):
            return np.inf
        lo = max(self.a1 - a, 0.0)
        hi = self.a2 - a
        return lo if lo < hi else np.inf


@dataclass(frozen=True)
class TimeConstants:
    t0: float
    t1: float


def time_constants(support: BoxSupport, params: PopulationParams) -> TimeConstants:
    """Reachability lags of a box support.

    t0 = max(s1, S - s2) measures how long a size has to drift before the
    size window can see it; t1 = max(a1 + S - s2, s1) adds the age delay.
    """
    if not isinstance(support, BoxSupport):
        raise DomainError("time constants are defined for box supports only")
    S = params.max_size
    t0 = max(support.s1, S - support.s2)
    t1 = max(support.a1 + S - support.s2, support.s1)
    return TimeConstants(t0=t0, t1=t1)


@dataclass(frozen=True)
class Threshold:
    value: float
    warnings: tuple = ()


def control_time_threshold(support, params: PopulationParams) -> Threshold:
    """Minimal horizon above which null control is guaranteed.

    Box supports: A - a2 + t1 + t0.  Oblique supports:
    max(S - s_e, A - a0 + a1).  Side conditions of the underlying
    sufficiency arguments are reported as warnings, never errors.
    """
    A, S = params.max_age, params.max_size
    warnings = []
    if isinstance(support, BoxSupport):
        tc = time_constants(support, params)
        if not support.a1 < params.min_fertility_age:
            warnings.append(
                f"side condition a1 < minimal fertility age violated "
                f"({support.a1} >= {params.min_fertility_age})"
            )
        cap = min(support.a2 - support.a1, params.min_fertility_age - support.a1)
        alt_cap = min(support.a2, params.min_fertility_age) - support.a1
        if not tc.t0 < cap:
            warnings.append(
                f"side condition t0 < min(a2 - a1, a_min_fert - a1) violated "
                f"(t0 = {tc.t0}, bound = {cap}, equivalent form = {alt_cap})"
            )
        value = A - support.a2 + tc.t1 + tc.t0
    elif isinstance(support, ObliqueSupport):
        if not support.a1 <= support.a0 <= params.min_fertility_age:
            warnings.append(
                f"side condition a1 <= a0 <= minimal fertility age violated "
                f"(a0 = {support.a0})"
            )
        value = max(S - support.s_e, A - support.a0 + support.a1)
    else:
        raise DomainError(f"unknown support variant {type(support).__name__}")
    return Threshold(value=value, warnings=tuple(warnings))


def classify_region(a: float, s: float, t: float, params: PopulationParams) -> str:
    """Split points by what determines the dual state there.

    "initial": the backward characteristic reaches time zero inside the
    domain, so the value carries the terminal-data contribution.
    "renewal": a boundary (a = A or s = S) is reached first and only the
    renewal term contributes.  Ties go to "renewal" (a measure-zero set).
    """
    if not (0 <= a <= params.max_age and 0 <= s <= params.max_size and t >= 0):
        raise DomainError("point outside the space-age-size-time domain")
    if t < params.max_age - a and t < params.max_size - s:
        return "initial"
    return "renewal"


class FateKind(Enum):
    ENTERS_SUPPORT = "enters_support"
    EXITS_SIZE_BOUNDARY = "exits_size_boundary"
    RENEWS_AT_MAX_AGE = "renews_at_max_age"
    REACHES_TIME_ZERO = "reaches_time_zero"


# Higher is better for controllability.
_FATE_RANK = {
    FateKind.ENTERS_SUPPORT: 3,
    FateKind.EXITS_SIZE_BOUNDARY: 2,
    FateKind.RENEWS_AT_MAX_AGE: 1,
    FateKind.REACHES_TIME_ZERO: 0,
}


@dataclass
class CharFate:
    """Outcome of one backward trace.

    ``kind`` is the headline fate: for a renewal with budget left it is
    the best fate over the restart fan, otherwise the segment's own
    event.  ``segment_kind`` always records what terminated this
    segment.  ``event_time`` is the absolute time of the headline event
    (it lies in [0, start time]); ``elapsed`` is measured from the start
    of the whole trace.  ``polyline`` lists (a, s, time) vertices of the
    headline path, one straight segment per renewal generation.
    ``fan`` holds the per-restart-size fates when a renewal branched.
    """

    kind: FateKind
    segment_kind: FateKind
    event_time: float
    elapsed: float
    polyline: list
    renewals: int
    fan: Optional[list] = None
    fertile_at_event: bool = False


def _segment_event(a, s, t, support, params):
    """First event along (a + e, s + e), returned as (kind, elapsed)."""
    e_enter = support.entering_elapsed(a, s) if support is not None else np.inf
    e_size = params.max_size - s
    e_age = params.max_age - a
    events = [
        (FateKind.ENTERS_SUPPORT, e_enter),
        (FateKind.EXITS_SIZE_BOUNDARY, e_size),
        (FateKind.RENEWS_AT_MAX_AGE, e_age),
        (FateKind.REACHES_TIME_ZERO, t),
    ]
    best_kind, best_e = None, np.inf
    for kind, e in events:
        if e < best_e:  # listed in tie-break priority order
            best_kind, best_e = kind, e
    return best_kind, best_e


def trace_backward_characteristic(
    a: float,
    s: float,
    t: float,
    support,
    params: PopulationParams,
    max_renewals: int = 1,
    fan_size: int = 8,
) -> CharFate:
    """Trace the dual characteristic backward from (a, s) at time t.

    On hitting the maximal age with renewal budget left, the trace
    restarts at age zero at that instant, once per newborn size in a fan
    of ``fan_size`` sizes equispaced in (0, max_newborn_size).  The
    headline fate is then the best case over the fan; the per-size fates
    are retained in ``fan``.
    """
    if max_renewals < 0:
        raise DomainError("max_renewals must be nonnegative")
    if not (0 <= a <= params.max_age and 0 <= s <= params.max_size):
        raise DomainError("start point outside the age-size domain")
    if t < 0:
        raise DomainError("start time must be nonnegative")
    return _trace(a, s, t, support, params, max_renewals, fan_size, elapsed0=0.0)


def _trace(a, s, t, support, params, budget, fan_size, elapsed0):
    kind, e = _segment_event(a, s, t, support, params)
    event_time = t - e
    seg = [(a, s, t), (a + e, s + e, event_time)]
    fertile = (a + e) >= params.min_fertility_age

    if kind is not FateKind.RENEWS_AT_MAX_AGE or budget == 0:
        return CharFate(
            kind=kind,
            segment_kind=kind,
            event_time=event_time,
            elapsed=elapsed0 + e,
            polyline=seg,
            renewals=0,
            fertile_at_event=fertile,
        )

    cutoff = min(params.max_newborn_size, params.max_size)
    sizes = (np.arange(fan_size) + 0.5) * (cutoff / fan_size)
    fan = [
        _trace(0.0, s0, event_time, support, params, budget - 1, fan_size,
               elapsed0=elapsed0 + e)
        for s0 in sizes
    ]
    best = max(fan, key=lambda f: (_FATE_RANK[f.kind], f.event_time))
    return CharFate(
        kind=best.kind,
        segment_kind=FateKind.RENEWS_AT_MAX_AGE,
        event_time=best.event_time,
        elapsed=best.elapsed,
        polyline=seg + best.polyline,
        renewals=1 + best.renewals,
        fan=fan,
        fertile_at_event=fertile,
    )


def fate_is_covered(fate: CharFate) -> bool:
    """Whether a trace ends harmlessly for observability purposes.

    Entering the support or leaving through the size boundary is
    covered.  A renewal is covered only when every member of its restart
    fan is covered (the renewal couples to all newborn sizes at once); a
    renewal with exhausted budget, or a trace reaching time zero, is
    not.  Size-boundary exits whose post-renewal age stayed below the
    minimal fertility age carry zero fertility, which is what licenses
    counting them as covered.
    """
    if fate.segment_kind is FateKind.RENEWS_AT_MAX_AGE:
        if not fate.fan:
            return False
        return all(fate_is_covered(f) for f in fate.fan)
    return fate.segment_kind in (FateKind.ENTERS_SUPPORT, FateKind.EXITS_SIZE_BOUNDARY)


@dataclass
class CoverageReport:
    fraction: float
    ages: np.ndarray
    sizes: np.ndarray
    covered: np.ndarray       # (na, ns) bool
    fate_kind: np.ndarray     # (na, ns) of str
    event_elapsed: np.ndarray
    renewals: np.ndarray

    def rows(self):
        """Iterate CSV-ready rows (a, s, fate, event_time, renewals)."""
        for i, a in enumerate(self.ages):
            for j, s in enumerate(self.sizes):
                yield (
                    float(a),
                    float(s),
                    str(self.fate_kind[i, j]),
                    float(self.event_elapsed[i, j]),
                    int(self.renewals[i, j]),
                )


def coverage_report(
    horizon: float,
    support,
    params: PopulationParams,
    na: int | None = None,
    ns: int | None = None,
    fan_size: int = 8,
) -> CoverageReport:
    """Trace every (a, s) cell backward from the horizon.

    A cell counts as covered when its trace (with a single renewal
    allowed) is covered in the sense of :func:`fate_is_covered`.  A
    fraction of 1.0 is the geometric signature that the horizon exceeds
    the support's control-time threshold.
    """
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    na = params.na if na is None else na
    ns = params.ns if ns is None else ns
    ages = (np.arange(na) + 0.5) * (params.max_age / na)
    sizes = (np.arange(ns) + 0.5) * (params.max_size / ns)

    covered = np.zeros((na, ns), dtype=bool)
    kind = np.empty((na, ns), dtype=object)
    elapsed = np.zeros((na, ns))
    renewals = np.zeros((na, ns), dtype=int)
    for i, a in enumerate(ages):
        for j, s in enumerate(sizes):
            fate = trace_backward_characteristic(
                a, s, horizon, support, params, max_renewals=1, fan_size=fan_size
            )
            covered[i, j] = fate_is_covered(fate)
            kind[i, j] = fate.kind.value
            elapsed[i, j] = fate.elapsed
            renewals[i, j] = fate.renewals
    return CoverageReport(
        fraction=float(covered.mean()),
        ages=ages,
        sizes=sizes,
        covered=covered,
        fate_kind=kind,
        event_elapsed=elapsed,
        renewals=renewals,
    )
