"""Positivity-preserving steering between two steady states.

Driving a population from one nonnegative steady state to another with
a single null-controlled leg generally swings the trajectory negative.
The staircase avoids that: interpolate the endpoints convexly into M
intermediate steady states, and on each leg null-control only the
difference to the next one.  If every intermediate state sits above a
floor delta on the cells the control can push down, and the controlled
difference never exceeds delta in sup norm, the physical trajectory
(difference plus interpolated steady state) stays nonnegative.

The sup-norm response ratio of a controlled leg is not available in
closed form, so it is estimated empirically from probe runs (with a
safety factor), and M is chosen as the smallest integer making the
per-leg gap at most delta over that ratio.  Positivity of the result is
verified, never enforced by clipping; clipping would silently break the
terminal-state guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .equilibria import SteadyState
from .errors import ExperimentError
from .forward import solve_forward
from .geometry import control_time_threshold
from .grids import Grid
from .hum import HUMConfig, HUMResult, synthesize_control
from .model import PopulationParams

__all__ = [
    "StaircasePlan",
    "LegResult",
    "StaircaseResult",
    "support_floor",
    "estimate_response_ratio",
    "plan_staircase",
    "run_staircase",
]


def support_floor(states, support, grid: Grid) -> float:
    """Smallest value any of the given fields takes on the support cells.

    The control only acts there, so those are the cells a leg can push
    negative first; the floor over them is the natural delta for the
    plan.
    """
    mask = grid.support_mask(support) > 0
    return float(min(np.where(mask, s, np.inf).min() for s in states))


def estimate_response_ratio(
    probes,
    support,
    horizon: float,
    params: PopulationParams,
    grid: Grid,
    hum: HUMConfig | None = None,
    safety: float = 2.0,
    diffusion: bool = True,
) -> float:
    """Empirical sup-norm response ratio of a null-controlled leg.

    For each probe initial state, synthesize the null control and
    measure sup |y| over the controlled trajectory divided by sup of
    the probe.  The max over probes, times a safety factor, stands in
    for the (non-constructive) stability constant of the leg.
    """
    ratios = []
    for probe in probes:
        sup0 = float(np.abs(probe).max())
        if sup0 == 0:
            continue
        cfg = HUMConfig(
            support=support,
            horizon=horizon,
            epsilon=hum.epsilon if hum else 1e-6,
            cg_tol=hum.cg_tol if hum else 1e-4,
            cg_max_iter=hum.cg_max_iter if hum else 200,
        )
        res = synthesize_control(probe, cfg, params, grid, diffusion=diffusion)
        traj = solve_forward(
            probe, res.control, horizon, params, grid, diffusion=diffusion, stride=10**9
        )
        ratios.append(float(max(traj.sup_norm)) / sup0)
    if not ratios:
        return safety
    return safety * max(ratios)


@dataclass
class StaircasePlan:
    start: SteadyState
    target: SteadyState
    legs: int                      # M
    leg_horizon: float             # T*
    delta: float
    response_ratio: float          # estimated, safety factor included
    support: object
    gap_sup: float                 # ||g_s - g_f||_inf
    threshold: float
    warnings: tuple = ()

    def intermediate(self, j: int) -> np.ndarray:
        """Convex interpolation (1 - j/M) start + (j/M) target, exact."""
        lam = j / self.legs
        return (1.0 - lam) * self.start.field + lam * self.target.field

    def intermediate_control(self, j: int) -> np.ndarray:
        lam = j / self.legs
        return (1.0 - lam) * self.start.control + lam * self.target.control

    @property
    def max_gap(self) -> float:
        return self.gap_sup / self.legs


def plan_staircase(
    start: SteadyState,
    target: SteadyState,
    delta: float,
    leg_horizon: float,
    support,
    params: PopulationParams,
    grid: Grid,
    response_ratio: float | None = None,
    hum: HUMConfig | None = None,
    probes: int = 3,
    safety: float = 2.0,
    diffusion: bool = True,
    min_legs: int = 1,
) -> StaircasePlan:
    """Size the staircase: number of legs from the floor and the ratio.

    Rejects endpoint pairs that do not clear the floor delta on the
    support cells (the positivity argument has nothing to stand on
    there).  The leg horizon must be grid-aligned and should exceed the
    support's control-time threshold; a shorter horizon is reported as
    a warning since the experiment is then expected to fail.
    """
    grid.steps(leg_horizon)  # validates alignment
    warnings = []
    floor = support_floor([start.field, target.field], support, grid)
    if floor < delta:
        raise ExperimentError(
            f"endpoint steady states dip to {floor:.3e} on the support, "
            f"below the requested floor delta = {delta:.3e}"
        )
    thr = control_time_threshold(support, params)
    if leg_horizon <= thr.value:
        warnings.append(
            f"leg horizon {leg_horizon} does not exceed the control-time "
            f"threshold {thr.value}; legs are expected to fail"
        )
    warnings.extend(thr.warnings)

    if response_ratio is None:
        diff = start.field - target.field
        rng = np.random.default_rng(0)
        probe_states = [diff]
        for _ in range(max(probes - 1, 0)):
            bump = rng.random(grid.state_shape)
            probe_states.append(diff * (0.5 + bump))
        response_ratio = estimate_response_ratio(
            probe_states, support, leg_horizon, params, grid,
            hum=hum, safety=safety, diffusion=diffusion,
        )

    gap_sup = float(np.abs(start.field - target.field).max())
    if gap_sup == 0.0:
        legs = max(1, min_legs)
    else:
        legs = max(min_legs, ceil(gap_sup * response_ratio / delta))
    return StaircasePlan(
        start=start,
        target=target,
        legs=legs,
        leg_horizon=leg_horizon,
        delta=delta,
        response_ratio=response_ratio,
        support=support,
        gap_sup=gap_sup,
        threshold=thr.value,
        warnings=tuple(warnings),
    )


@dataclass
class LegResult:
    index: int
    hum: HUMResult
    min_physical: float        # min of the physical trajectory over the leg
    terminal_gap: float        # sup |G(T*) - target of the leg|
    sup_difference: float      # sup |controlled difference| over the leg


@dataclass
class StaircaseResult:
    plan: StaircasePlan
    legs: list
    final_error: float         # ||y(M T*) - g_f|| / ||g_f||, L2
    trajectory_min: float
    positivity_ok: bool
    positivity_violation: tuple | None  # (leg, time index, value) of the worst dip
    controls_sup: float


def run_staircase(
    plan: StaircasePlan,
    params: PopulationParams,
    grid: Grid,
    hum: HUMConfig | None = None,
    diffusion: bool = True,
    residual_tolerance: float = np.inf,
) -> StaircaseResult:
    """Execute the staircase and verify target and positivity.

    Each leg synthesizes a null control for the difference between the
    actual state (the previous leg's terminal state, consumed as a
    checked invariant) and the next intermediate steady state, then
    reconstructs the physical trajectory as difference plus steady
    state and the physical control as leg control plus steady control.
    Violations are reported with location and magnitude; nothing is
    clipped.
    """
    eps = hum.epsilon if hum else 1e-6
    cg_tol = hum.cg_tol if hum else 1e-4
    cg_max_iter = hum.cg_max_iter if hum else 200

    current = plan.start.field.copy()
    legs: list[LegResult] = []
    worst_min = np.inf
    worst_where = None
    controls_sup = 0.0

    for j in range(1, plan.legs + 1):
        target_j = plan.intermediate(j)
        steady_control_j = plan.intermediate_control(j)
        diff0 = current - target_j

        cfg = HUMConfig(
            support=plan.support, horizon=plan.leg_horizon, epsilon=eps,
            cg_tol=cg_tol, cg_max_iter=cg_max_iter,
        )
        res = synthesize_control(diff0, cfg, params, grid, diffusion=diffusion)
        if res.residual_norm > residual_tolerance:
            raise ExperimentError(
                f"leg {j}: residual {res.residual_norm:.3e} above tolerance "
                f"{residual_tolerance:.3e}; increase the leg count or horizon"
            )
        diff_traj = solve_forward(
            diff0, res.control, plan.leg_horizon, params, grid,
            diffusion=diffusion, stride=1,
        )

        # Physical trajectory = difference + steady interpolant (solver
        # linearity makes this identical to simulating G directly).
        leg_min = np.inf
        for snap in diff_traj.snapshots:
            leg_min = min(leg_min, float((snap + target_j).min()))
        sup_diff = float(max(np.abs(s).max() for s in diff_traj.snapshots))
        terminal_gap = float(np.abs(diff_traj.terminal).max())

        controls_sup = max(
            controls_sup,
            float(np.abs(res.control + steady_control_j[None]).max()),
        )
        if leg_min < worst_min:
            worst_min = leg_min
            mins = [float((s + target_j).min()) for s in diff_traj.snapshots]
            worst_where = (j, int(np.argmin(mins)), leg_min)
        legs.append(LegResult(
            index=j,
            hum=res,
            min_physical=leg_min,
            terminal_gap=terminal_gap,
            sup_difference=sup_diff,
        ))
        current = diff_traj.terminal + target_j

    target_norm = grid.norm(plan.target.field)
    final_error = (
        grid.norm(current - plan.target.field) / target_norm
        if target_norm > 0 else grid.norm(current)
    )
    positivity_ok = worst_min >= -1e-10
    return StaircaseResult(
        plan=plan,
        legs=legs,
        final_error=final_error,
        trajectory_min=worst_min,
        positivity_ok=positivity_ok,
        positivity_violation=None if positivity_ok else worst_where,
        controls_sup=controls_sup,
    )
