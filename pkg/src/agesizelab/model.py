"""Demographic rates and closed-form quantities for the age-size model.

The state is a density y(x, a, s) of individuals of age a and size s at
spatial position x.  Mortality is additive, mu(a, s) = mu1(a) + mu2(s),
and fertility is a kernel beta(a, s_parent, s_newborn) >= 0 feeding the
renewal boundary condition at age zero.  Sizes grow at unit speed, so
size is time-commensurate with age.

Rates are tabulated on cell-centered nodes, a_i = (i + 1/2) * da, so the
endpoints a = A and s = S (where the mortality integral may diverge) are
never sampled.  Survival probabilities are derived from cumulative
integrals of the rate tables; analytic presets carry a closed-form
cumulative so that survival vanishes exactly at the endpoint.  All
quadratures are midpoint rules on the tabulation grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError

__all__ = [
    "MortalityRate",
    "PopulationParams",
    "HypothesisResult",
    "ValidationReport",
    "HYPOTHESES",
    "linear_survival_mortality",
    "zero_mortality",
    "constant_mortality",
    "tabulated_mortality",
    "fertility_from_function",
    "uniform_fertility",
    "fertility_matrix",
    "renewal_profile",
    "reproductive_number",
    "sup_reproductive_number",
    "validate_hypotheses",
]

# Hypothesis tags accepted by validate_hypotheses.
HYPOTHESES = frozenset(
    {
        "age_mortality_diverges",     # integral of mu1 over (0, A) is infinite
        "size_mortality_diverges",    # integral of mu2 over (0, S) is infinite
        "fertility_nonnegative",      # beta >= 0 and finite everywhere
        "fertility_min_age",          # beta(a, ., .) = 0 for a below the minimal fertility age
        "fertility_max_newborn_size", # beta(., ., s) = 0 for s above the maximal newborn size
    }
)


@dataclass(frozen=True)
class MortalityRate:
    """Mortality rate on [0, length), tabulated at cell-centered nodes.

    Parameters
    ----------
    length : float
        Right endpoint of the domain (maximal age or maximal size).
    values : ndarray
        Rate sampled at the n cell centers (i + 1/2) * length / n.
    cumulative_fn : callable, optional
        Closed-form cumulative integral of the rate from 0.  When absent
        the cumulative is reconstructed from the table by treating the
        rate as constant on each cell.  ``cumulative_fn(length)`` may be
        infinite, which encodes that no individual survives past the
        endpoint.
    """

    length: float
    values: np.ndarray
    cumulative_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 1:
            raise ValueError("mortality table must be one-dimensional")

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.spacing

    def _table_cumulative(self, a: np.ndarray) -> np.ndarray:
        # Integral of the piecewise-constant reconstruction of the table.
        h = self.spacing
        edges = np.concatenate([[0.0], h * np.cumsum(self.values)])
        cell = np.clip((a // h).astype(int), 0, self.n - 1)
        return edges[cell] + self.values[cell] * (a - cell * h)

    def cumulative(self, a) -> np.ndarray:
        """Integral of the rate from 0 to a, for a in [0, length]."""
        arr = np.asarray(a, dtype=float)
        if np.any(arr < 0) or np.any(arr > self.length):
            raise DomainError(f"argument outside [0, {self.length}]")
        if self.cumulative_fn is not None:
            with np.errstate(divide="ignore"):
                out = np.asarray(self.cumulative_fn(arr), dtype=float)
        else:
            out = self._table_cumulative(arr)
        return out if out.shape else float(out)

    def survival(self, a) -> np.ndarray:
        """exp(-integral of the rate), nonincreasing, equal to 1 at 0."""
        return np.exp(-self.cumulative(a))

    def survival_ratio(self, a, lag) -> np.ndarray:
        """survival(a) / survival(a - lag) computed by cumulative subtraction.

        Safe where survival(a) underflows or the cumulative diverges at
        the endpoint: the ratio tends to 0 there rather than 0/0.
        """
        a = np.asarray(a, dtype=float)
        lag = np.asarray(lag, dtype=float)
        hi = self.cumulative(a)
        lo = self.cumulative(a - lag)
        diff = np.where(lag == 0, 0.0, np.asarray(hi) - np.asarray(lo))
        out = np.exp(-diff)
        return out if out.shape else float(out)

    def center_cumulative(self) -> np.ndarray:
        """Cumulative integral evaluated at the cell centers."""
        return np.asarray(self.cumulative(self.centers), dtype=float)

    def step_ratios(self) -> np.ndarray:
        """Per-cell survival ratios survival(c_i)/survival(c_{i-1}).

        ratios[0] is survival at the first center (survival from 0).
        Products of consecutive ratios telescope exactly to the ratio of
        the endpoint survivals, which keeps multi-step decay exact.
        """
        k = self.center_cumulative()
        return np.exp(-np.diff(k, prepend=0.0))


def tabulated_mortality(values, length: float) -> MortalityRate:
    """Mortality from a raw table of cell-centered rate values."""
    return MortalityRate(length=length, values=np.asarray(values, dtype=float))


def linear_survival_mortality(length: float, n: int) -> MortalityRate:
    """Rate 1/(length - a): survival decays linearly to 0 at the endpoint."""
    centers = (np.arange(n) + 0.5) * (length / n)
    values = 1.0 / (length - centers)

    def cumulative(a):
        with np.errstate(divide="ignore"):
            return np.log(length) - np.log(length - np.asarray(a, dtype=float))

    return MortalityRate(length=length, values=values, cumulative_fn=cumulative)


def zero_mortality(length: float, n: int) -> MortalityRate:
    return MortalityRate(
        length=length,
        values=np.zeros(n),
        cumulative_fn=lambda a: np.zeros_like(np.asarray(a, dtype=float)),
    )


def constant_mortality(rate: float, length: float, n: int) -> MortalityRate:
    return MortalityRate(
        length=length,
        values=np.full(n, float(rate)),
        cumulative_fn=lambda a: float(rate) * np.asarray(a, dtype=float),
    )


def fertility_from_function(fn, na: int, ns: int, max_age: float, max_size: float) -> np.ndarray:
    """Sample a fertility kernel fn(a, s_parent, s_newborn) at cell centers."""
    a = ((np.arange(na) + 0.5) * (max_age / na))[:, None, None]
    sp = ((np.arange(ns) + 0.5) * (max_size / ns))[None, :, None]
    sn = ((np.arange(ns) + 0.5) * (max_size / ns))[None, None, :]
    return np.asarray(fn(a, sp, sn), dtype=float) * np.ones((na, ns, ns))


def uniform_fertility(
    na: int,
    ns: int,
    max_age: float,
    max_size: float,
    level: float,
    min_age: float,
    max_newborn_size: float | None = None,
) -> np.ndarray:
    """Kernel equal to ``level`` for parents older than ``min_age``.

    Optionally zero for newborn sizes above ``max_newborn_size``.
    """
    cutoff = max_size if max_newborn_size is None else max_newborn_size

    def fn(a, sp, sn):
        return level * (a > min_age) * (sn < cutoff)

    return fertility_from_function(fn, na, ns, max_age, max_size)


@dataclass(frozen=True)
class PopulationParams:
    """Model data: rates, kernels, and the fertility thresholds.

    The fertility kernel is indexed beta[parent_age, parent_size,
    newborn_size] on the same cell-centered nodes as the mortalities.
    ``min_fertility_age`` is the age below which the kernel is expected
    to vanish, ``max_newborn_size`` the size above which newborns are
    not produced; both are checked by :func:`validate_hypotheses` when
    the corresponding hypothesis is declared.
    """

    max_age: float
    max_size: float
    age_mortality: MortalityRate
    size_mortality: MortalityRate
    fertility: np.ndarray
    min_fertility_age: float
    max_newborn_size: float
    fertility_fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "fertility", np.asarray(self.fertility, dtype=float))
        na, ns = self.age_mortality.n, self.size_mortality.n
        if self.fertility.shape != (na, ns, ns):
            raise ValueError(
                f"fertility table shape {self.fertility.shape} does not match "
                f"the mortality tabulation ({na}, {ns}, {ns})"
            )
        if abs(self.age_mortality.length - self.max_age) > 1e-12 * max(1.0, self.max_age):
            raise ValueError("age mortality table does not span [0, max_age)")
        if abs(self.size_mortality.length - self.max_size) > 1e-12 * max(1.0, self.max_size):
            raise ValueError("size mortality table does not span [0, max_size)")

    @property
    def na(self) -> int:
        return self.age_mortality.n

    @property
    def ns(self) -> int:
        return self.size_mortality.n

    @property
    def da(self) -> float:
        return self.age_mortality.spacing

    @property
    def ds(self) -> float:
        return self.size_mortality.spacing

    @property
    def age_centers(self) -> np.ndarray:
        return self.age_mortality.centers

    @property
    def size_centers(self) -> np.ndarray:
        return self.size_mortality.centers


def fertility_matrix(params: PopulationParams) -> np.ndarray:
    """Quadrature-weighted kernel reshaped to (na * ns, ns).

    Right-multiplying a flattened population slice by this matrix yields
    the newborn size profile (midpoint rule in parent age and size).
    """
    return params.fertility.reshape(params.na * params.ns, params.ns) * (params.da * params.ds)


def renewal_profile(state: np.ndarray, params: PopulationParams) -> np.ndarray:
    """Newborn density by size produced by a population state.

    ``state`` has shape (..., na, ns); the result has shape (..., ns).
    Nonnegative whenever the state and the kernel are.
    """
    flat = state.reshape(*state.shape[:-2], params.na * params.ns)
    return flat @ fertility_matrix(params)


def reproductive_number(params: PopulationParams) -> np.ndarray:
    """Expected lifetime offspring density per newborn size.

    Midpoint quadrature of the fertility kernel weighted by the age
    survival, over parent age and parent size.
    """
    pi1 = params.age_mortality.survival(params.age_centers)
    return np.einsum("ijk,i->k", params.fertility, pi1) * (params.da * params.ds)


def sup_reproductive_number(params: PopulationParams) -> float:
    r = reproductive_number(params)
    return float(r.max()) if r.size else 0.0


@dataclass
class HypothesisResult:
    name: str
    status: str  # "pass" | "fail" | "not_asserted"
    detail: str = ""
    locations: list = field(default_factory=list)


@dataclass
class ValidationReport:
    results: dict
    errors: list
    warnings: list

    @property
    def passed(self) -> bool:
        return not self.errors and all(
            r.status != "fail" for r in self.results.values()
        )

    def summary_lines(self) -> list[str]:
        lines = [f"{name}: {res.status}" + (f" ({res.detail})" if res.detail else "")
                 for name, res in self.results.items()]
        lines += [f"error: {e}" for e in self.errors]
        lines += [f"warning: {w}" for w in self.warnings]
        return lines


def _check_divergence(rate: MortalityRate, floor: float, label: str, report: ValidationReport) -> HypothesisResult:
    if rate.n == 0:
        return HypothesisResult(label, "fail", "empty mortality table")
    end_survival = float(rate.survival(rate.length))
    if end_survival < floor:
        return HypothesisResult(label, "pass", f"survival at endpoint = {end_survival:.3e}")
    res = HypothesisResult(
        label, "fail",
        f"survival at endpoint = {end_survival:.3e} exceeds floor {floor:.1e}",
    )
    if rate.cumulative_fn is None and rate.values.size and rate.values[-1] * rate.spacing > 1.0:
        report.warnings.append(
            f"{label}: the rate table is steep near the endpoint "
            f"(last value {rate.values[-1]:.3g}); the tabulated cumulative may "
            "under-resolve the singularity - refine the table or attach an "
            "analytic cumulative"
        )
    return res


def validate_hypotheses(params: PopulationParams, declared, floor: float = 1e-8) -> ValidationReport:
    """Check each declared demographic hypothesis against the tabulation.

    Table defects (emptiness, negative rates, non-finite entries) are
    reported as failure entries, never raised.  Undeclared hypotheses
    are listed as "not_asserted".
    """
    declared = set(declared)
    unknown = declared - HYPOTHESES
    if unknown:
        raise ValueError(f"unknown hypothesis tags: {sorted(unknown)}")

    report = ValidationReport(results={}, errors=[], warnings=[])

    for label, rate in (("age mortality", params.age_mortality),
                        ("size mortality", params.size_mortality)):
        if rate.n == 0:
            report.errors.append(f"{label} table is empty")
            continue
        if not np.all(np.isfinite(rate.values)):
            report.errors.append(f"{label} table has non-finite entries")
        bad = np.where(rate.values < 0)[0]
        if bad.size:
            report.errors.append(
                f"{label} table has negative values at indices {bad[:5].tolist()}"
            )
    if params.fertility.size == 0:
        report.errors.append("fertility table is empty")

    for name in sorted(HYPOTHESES):
        if name not in declared:
            report.results[name] = HypothesisResult(name, "not_asserted")
            continue

        if name == "age_mortality_diverges":
            report.results[name] = _check_divergence(params.age_mortality, floor, name, report)
        elif name == "size_mortality_diverges":
            report.results[name] = _check_divergence(params.size_mortality, floor, name, report)
        elif name == "fertility_nonnegative":
            finite = np.all(np.isfinite(params.fertility))
            neg = np.argwhere(params.fertility < 0)
            if finite and neg.size == 0:
                report.results[name] = HypothesisResult(name, "pass")
            else:
                detail = "non-finite entries" if not finite else "negative entries"
                report.results[name] = HypothesisResult(
                    name, "fail", detail, locations=neg[:5].tolist()
                )
        elif name == "fertility_min_age":
            young = params.age_centers < params.min_fertility_age
            block = params.fertility[young]
            viol = np.argwhere(block != 0)
            if viol.size == 0:
                report.results[name] = HypothesisResult(name, "pass")
            else:
                report.results[name] = HypothesisResult(
                    name, "fail",
                    f"kernel nonzero at {viol.shape[0]} nodes below the minimal fertility age",
                    locations=viol[:5].tolist(),
                )
        elif name == "fertility_max_newborn_size":
            big = params.size_centers > params.max_newborn_size
            block = params.fertility[:, :, big]
            viol = np.argwhere(block != 0)
            if viol.size == 0:
                report.results[name] = HypothesisResult(name, "pass")
            else:
                report.results[name] = HypothesisResult(
                    name, "fail",
                    f"kernel nonzero at {viol.shape[0]} nodes above the maximal newborn size",
                    locations=viol[:5].tolist(),
                )

    return report
