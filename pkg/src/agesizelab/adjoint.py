"""Dual (adjoint) solver, discretely paired with the forward stepper.

The dual system runs backward in time from terminal data.  Rather than
discretizing the dual PDE independently, each backward step applies the
exact algebraic transpose of the forward step: the transposed shift
enforces the dual boundary conditions at maximal age and size, and the
transposed renewal fill produces the dual source, the fertility kernel
integrated over newborn sizes against the dual age-zero layer.  With
this pairing the discrete duality identity

    <y(T), qT> = <y0, q(0)> + sum_k dt * <m u_k, q_{k+1}>

holds to round-off for any controls, which is what makes the control
synthesis gradient exact.  Consistency with the continuous dual system
is a measured convergence property, checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import TimeStepper
from .grids import Grid
from .model import PopulationParams

__all__ = ["AdjointTrajectory", "adjoint_step", "solve_adjoint", "observed_norm"]


@dataclass
class AdjointTrajectory:
    """Dual states q(t_k), k = 0..nt, in forward-time indexing."""

    times: np.ndarray
    states: list
    grid: Grid = field(repr=False)

    @property
    def initial(self) -> np.ndarray:
        """q at time zero (the terminal state of the backward sweep)."""
        return self.states[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def adjoint_step(
    dual_state: np.ndarray,
    params: PopulationParams,
    grid: Grid,
    diffusion: bool = True,
) -> np.ndarray:
    """One backward step: q(t_k) from q(t_{k+1})."""
    return TimeStepper(params, grid, diffusion=diffusion).adjoint_step(dual_state)


def solve_adjoint(
    terminal: np.ndarray,
    horizon: float,
    params: PopulationParams,
    grid: Grid,
    diffusion: bool = True,
    stepper: TimeStepper | None = None,
) -> AdjointTrajectory:
    """Sweep the dual system backward from its terminal datum.

    All intermediate states are stored (the control synthesis needs the
    whole history); at desk scale this is a few tens of megabytes.
    """
    nt = grid.steps(horizon)
    op = stepper if stepper is not None else TimeStepper(params, grid, diffusion=diffusion)
    states = [None] * (nt + 1)
    q = np.array(terminal, dtype=float, copy=True)
    states[nt] = q.copy()
    for k in range(nt - 1, -1, -1):
        q = op.adjoint_step(q)
        states[k] = q.copy()
    return AdjointTrajectory(times=np.arange(nt + 1) * grid.dt, states=states, grid=grid)


def observed_norm(adj: AdjointTrajectory, support, grid: Grid) -> float:
    """Observation energy: time integral of the squared restriction of
    the dual state to the support.

    Rectangle rule over the samples t_1..t_nt, matching the pairing of
    control slice k with the dual state at t_{k+1}; with that convention
    the energy equals the quadratic form of the controllability Gramian.
    """
    mask = grid.support_mask(support)
    total = 0.0
    for q in adj.states[1:]:
        total += float(np.sum((mask * q) ** 2))
    return total * grid.dt * grid.cell_volume
