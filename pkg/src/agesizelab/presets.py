"""Ready-made model scenarios used by the experiments, tests and demos."""

from __future__ import annotations

import numpy as np

from .geometry import BoxSupport, ObliqueSupport
from .grids import Grid, build_grid
from .model import (
    PopulationParams,
    linear_survival_mortality,
    uniform_fertility,
    zero_mortality,
)

__all__ = [
    "reference_params",
    "reference_grid",
    "reference_box_support",
    "reference_oblique_support",
    "padded_growth_params",
    "bump_initial_state",
]


def reference_params(
    na: int = 64,
    ns: int = 64,
    fertility_level: float = 5.0,
    min_fertility_age: float = 0.55,
    max_newborn_size: float | None = None,
    size_mortality: str = "linear",
) -> PopulationParams:
    """Unit square scenario: A = S = 1, mortality 1/(1 - a) + 1/(1 - s).

    Fertility is flat at ``fertility_level`` for parents above the
    minimal fertility age, optionally cut off above a maximal newborn
    size.  ``size_mortality`` may be "linear" (same singular profile as
    age) or "zero" (the simplification used for steady-state work).
    """
    if size_mortality == "linear":
        mu2 = linear_survival_mortality(1.0, ns)
    elif size_mortality == "zero":
        mu2 = zero_mortality(1.0, ns)
    else:
        raise ValueError(f"unknown size mortality preset {size_mortality!r}")
    cutoff = 1.0 if max_newborn_size is None else max_newborn_size
    beta = uniform_fertility(
        na, ns, 1.0, 1.0, fertility_level, min_fertility_age, max_newborn_size
    )

    def beta_fn(a, sp, sn):
        return fertility_level * (a > min_fertility_age) * (sn < cutoff)

    return PopulationParams(
        max_age=1.0,
        max_size=1.0,
        age_mortality=linear_survival_mortality(1.0, na),
        size_mortality=mu2,
        fertility=beta,
        min_fertility_age=min_fertility_age,
        max_newborn_size=cutoff,
        fertility_fn=beta_fn,
    )


def reference_grid(nx: int = 16, na: int = 64, ns: int = 64, **kwargs) -> Grid:
    return build_grid(1.0, 1.0, na, ns, nx, **kwargs)


def reference_box_support(omega=((0.3, 0.7),)) -> BoxSupport:
    return BoxSupport(a1=0.1, a2=0.5, s1=0.1, s2=0.9, omega=omega)


def reference_oblique_support(omega=((0.3, 0.7),)) -> ObliqueSupport:
    return ObliqueSupport(a1=0.1, a2=0.9, a0=0.5, s_e=0.6, omega=omega)


def padded_growth_params(
    target_reproduction: float,
    na: int = 32,
    min_fertility_age: float = 0.55,
    newborn_size_cap: float = 0.5,
) -> PopulationParams:
    """Growth-dichotomy scenario with a padded size domain.

    Maximal size is A + newborn size cap, so no newborn can reach the
    absorbing size boundary within its lifetime; the age-only growth
    reduction is then exact and the sup of the reproductive number
    alone decides growth versus decay.  Size mortality is zero and the
    kernel is independent of both parent and newborn size on its
    support, matching the reduction's assumptions.

    Returns parameters whose sup reproductive number is (up to
    quadrature error) ``target_reproduction``.
    """
    max_age = 1.0
    max_size = max_age + newborn_size_cap
    ns = round(na * max_size / max_age)
    # integral of survival over fertile ages, for the linear preset
    fertile_mass = 0.5 * (max_age - min_fertility_age) ** 2 / max_age
    level = target_reproduction / (fertile_mass * max_size)
    beta = uniform_fertility(
        na, ns, max_age, max_size, level, min_fertility_age, newborn_size_cap
    )
    return PopulationParams(
        max_age=max_age,
        max_size=max_size,
        age_mortality=linear_survival_mortality(max_age, na),
        size_mortality=zero_mortality(max_size, ns),
        fertility=beta,
        min_fertility_age=min_fertility_age,
        max_newborn_size=newborn_size_cap,
    )


def bump_initial_state(grid: Grid, center=(0.3, 0.4), width: float = 0.15) -> np.ndarray:
    """Smooth positive initial density, mildly structured in space."""
    a = grid.age_centers[None, :, None]
    s = grid.size_centers[None, None, :]
    bump = np.exp(-((a - center[0]) ** 2 + (s - center[1]) ** 2) / (2 * width**2))
    if grid.spatial_dim == 1:
        x = grid.x_centers
    else:
        x = np.add.outer(grid.x_centers, grid.x_centers).ravel() / 2.0
    spatial = 1.0 + 0.5 * np.cos(np.pi * x / grid.omega_length)
    return spatial[:, None, None] * bump
