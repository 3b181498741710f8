"""Steady states, the growth dichotomy, and the sup-norm monitor.

A steady state balances aging, growth, diffusion, decay and renewal
against a time-independent nonnegative control.  It is computed by a
Banach-style fixed point: given a guess for the population, the renewal
datum is evaluated from it, the resulting linear system is integrated
along characteristics (age and size advance together, with the same
implicit diffusion and source placement as the time stepper, so the
result is a fixed point of the discrete step), and the newborn profile
is updated.  When the sup of the reproductive number is below one the
iteration contracts at least that fast, and the zero control yields the
zero state exactly.

Above one, no nonnegative steady state exists and the uncontrolled
dynamics grow without bound; `detect_blowup` measures the sign of the
growth rate from a long free run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistencyError, StagnationError
from .forward import TimeStepper, Trajectory
from .grids import DiffusionOperator, Grid
from .model import PopulationParams, sup_reproductive_number

__all__ = [
    "SteadyState",
    "solve_steady",
    "BlowupReport",
    "detect_blowup",
    "linf_monitor",
    "positive_floor_box",
]


@dataclass
class SteadyState:
    field: np.ndarray
    control: np.ndarray
    iterations: int
    residual: float
    contraction_history: np.ndarray
    sup_reproduction: float
    floor_value: float          # measured lower bound over the reported box
    floor_box: tuple            # ((a_lo, a_hi), (s_lo, s_hi)) of the box
    warnings: tuple = ()


def _steady_sweep(
    newborn: np.ndarray,
    control: np.ndarray,
    stepper: TimeStepper,
    grid: Grid,
) -> np.ndarray:
    """Integrate the steady system along characteristics.

    Given the newborn profile (the age-zero layer) this marches
    diagonally through (a, s), applying exactly the sub-steps of one
    time step, so the output is what the time stepper maps a steady
    state to when the renewal datum is held fixed.
    """
    out = grid.zeros()
    diff = stepper.diffusion
    dt = grid.dt
    r1, r2 = stepper.ratio_age, stepper.ratio_size

    layer = newborn.copy()
    layer[:, 0] = 0.0  # the size-zero corner belongs to the zero-inflow side
    if diff is not None:
        layer = diff.apply(layer)
    out[:, 0, :] = layer + dt * control[:, 0, :]

    for i in range(1, grid.na):
        moved = np.zeros((grid.n_space, grid.ns))
        moved[:, 1:] = out[:, i - 1, :-1] * (r1[i] * r2[1:])[None, :]
        if diff is not None:
            moved = diff.apply(moved)
        out[:, i, :] = moved + dt * control[:, i, :]
    return out


def solve_steady(
    control,
    params: PopulationParams,
    grid: Grid,
    tol: float = 1e-10,
    max_iter: int = 200,
    diffusion: bool = True,
    floor_box: tuple | None = None,
) -> SteadyState:
    """Fixed-point iteration for the steady state under a steady control.

    ``control`` is a scalar or a full field; it should be nonnegative
    for the positivity statements to apply.  Convergence is measured in
    the sup norm of successive iterates; the measured contraction
    factor is reported next to the quadrature value of the reproductive
    number's sup, which bounds it.
    """
    grid.check_matches(params)
    if np.isscalar(control):
        control = np.full(grid.state_shape, float(control))
    warnings = []
    sup_r = sup_reproductive_number(params)
    if sup_r >= 1:
        warnings.append(
            f"sup reproductive number = {sup_r:.4f} >= 1: no nonnegative "
            "steady state is expected; iterating anyway"
        )
    stepper = TimeStepper(params, grid, diffusion=diffusion)

    state = grid.zeros()
    history = []
    prev_newborn = None
    prev_newborn_change = None
    residual = np.inf
    for it in range(1, max_iter + 1):
        newborn = stepper._renewal(state)
        # Contraction lives on the renewal datum: successive differences
        # of the newborn profile shrink by at most the sup of the
        # reproductive number (field differences only do so in pairs).
        if prev_newborn is not None:
            newborn_change = float(np.abs(newborn - prev_newborn).max())
            if prev_newborn_change not in (None, 0.0):
                history.append(newborn_change / prev_newborn_change)
            prev_newborn_change = newborn_change
        prev_newborn = newborn
        new_state = _steady_sweep(newborn, control, stepper, grid)
        change = float(np.abs(new_state - state).max())
        state = new_state
        residual = change
        if change <= tol:
            break
    else:
        raise StagnationError(
            f"steady-state iteration did not reach tol = {tol} in "
            f"{max_iter} iterations (last change {residual:.3e}); "
            f"sup reproductive number = {sup_r:.4f}",
            trace=np.asarray(history),
        )

    if floor_box is None:
        floor_box = positive_floor_box(state, grid)
    floor_value = _box_min(state, grid, floor_box)
    return SteadyState(
        field=state,
        control=control,
        iterations=it,
        residual=residual,
        contraction_history=np.asarray(history),
        sup_reproduction=sup_r,
        floor_value=floor_value,
        floor_box=floor_box,
        warnings=tuple(warnings),
    )


def _box_min(state: np.ndarray, grid: Grid, box) -> float:
    (a_lo, a_hi), (s_lo, s_hi) = box
    ia = (grid.age_centers >= a_lo) & (grid.age_centers <= a_hi)
    js = (grid.size_centers >= s_lo) & (grid.size_centers <= s_hi)
    if not ia.any() or not js.any():
        return 0.0
    return float(state[:, ia][:, :, js].min())


def positive_floor_box(state: np.ndarray, grid: Grid, rel_floor: float = 1e-6) -> tuple:
    """Largest age-size box on which the field stays above a relative floor.

    The floor is ``rel_floor`` times the sup of the field.  Grown
    greedily from the cell row/column structure: ages from zero up to
    the first age whose worst size-slice (within the size window) dips
    below the floor, sizes symmetrically.
    """
    sup = float(np.abs(state).max())
    if sup == 0.0:
        return ((0.0, 0.0), (0.0, 0.0))
    thr = rel_floor * sup
    worst = state.min(axis=0)  # (na, ns), worst spatial value per cell

    ok_size = (worst >= thr).all(axis=0)
    js = np.where(ok_size)[0]
    if js.size == 0:
        # fall back to the best contiguous size band at age zero
        ok_size = worst[0] >= thr
        js = np.where(ok_size)[0]
        if js.size == 0:
            return ((0.0, 0.0), (0.0, 0.0))
    # longest contiguous run of admissible sizes
    runs = np.split(js, np.where(np.diff(js) > 1)[0] + 1)
    run = max(runs, key=len)
    j_lo, j_hi = run[0], run[-1]

    ok_age = (worst[:, j_lo : j_hi + 1] >= thr).all(axis=1)
    ia = 0
    while ia < len(ok_age) and ok_age[ia]:
        ia += 1
    if ia == 0:
        return ((0.0, 0.0), (0.0, 0.0))
    a_hi = grid.age_centers[ia - 1]
    return ((0.0, float(a_hi)), (float(grid.size_centers[j_lo]), float(grid.size_centers[j_hi])))


@dataclass
class BlowupReport:
    rate: float
    verdict: str             # "grow" | "decay" | "inconclusive"
    times: np.ndarray
    norms: np.ndarray
    sup_reproduction: float
    reduction_faithful: bool  # kernel independent of parent size after newborn integration
    warnings: tuple = ()


def detect_blowup(
    params: PopulationParams,
    grid: Grid,
    horizon: float,
    initial=None,
    tail_fraction: float = 0.5,
    diffusion: bool = True,
) -> BlowupReport:
    """Fit the exponential growth rate of the uncontrolled dynamics.

    Runs the free dynamics from a positive state and fits log of the L2
    norm against time on the tail of the run.  A positive rate is the
    supercritical signature (sup reproductive number above one), a
    negative rate the subcritical one.  The age-only reduction behind
    that dichotomy requires the newborn-integrated kernel to be
    independent of the parent size; a caveat flag is set otherwise.
    """
    grid.check_matches(params)
    if initial is None:
        initial = np.ones(grid.state_shape)
    nt = grid.steps(horizon)

    gamma_by_parent = params.fertility.sum(axis=2) * params.ds  # (na, ns)
    spread = float(np.ptp(gamma_by_parent, axis=1).max())
    scale = float(np.abs(gamma_by_parent).max())
    faithful = spread <= 1e-12 * max(scale, 1.0)

    warnings = []
    if not faithful:
        warnings.append(
            "kernel depends on parent size after newborn integration; the "
            "age-only growth reduction is heuristic here"
        )

    from .forward import solve_forward

    traj = solve_forward(initial, None, horizon, params, grid,
                         diffusion=diffusion, stride=max(nt, 1))
    norms = traj.l2_norm
    times = traj.times

    start = int((1.0 - tail_fraction) * nt)
    tail_t = times[start:]
    tail_n = norms[start:]
    if tail_n.min() <= 0 or tail_t.size < 4:
        return BlowupReport(
            rate=np.nan, verdict="inconclusive", times=times, norms=norms,
            sup_reproduction=sup_reproductive_number(params),
            reduction_faithful=faithful,
            warnings=tuple(warnings + ["tail too short or norms vanished"]),
        )
    rate = float(np.polyfit(tail_t, np.log(tail_n), 1)[0])

    resid = np.log(tail_n) - np.polyval(np.polyfit(tail_t, np.log(tail_n), 1), tail_t)
    if abs(rate) * (tail_t[-1] - tail_t[0]) < 5 * float(np.std(resid)):
        verdict = "inconclusive"
        warnings.append("fitted rate is small against the fit scatter")
    else:
        verdict = "grow" if rate > 0 else "decay"
    return BlowupReport(
        rate=rate,
        verdict=verdict,
        times=times,
        norms=norms,
        sup_reproduction=sup_reproductive_number(params),
        reduction_faithful=faithful,
        warnings=tuple(warnings),
    )


def linf_monitor(traj: Trajectory, controls: np.ndarray | None = None) -> float:
    """Empirical stability constant: sup |y| over the run divided by
    (sup |u| + sup |y0|).

    Defined as 0 when both the trajectory and the inputs vanish; a zero
    denominator with a nonzero trajectory is inconsistent and raises.
    """
    sup_y = float(max(traj.sup_norm))
    sup_u = float(np.abs(controls).max()) if controls is not None and controls.size else 0.0
    sup_y0 = float(traj.sup_norm[0])
    denom = sup_u + sup_y0
    if denom == 0.0:
        if sup_y == 0.0:
            return 0.0
        raise InconsistencyError(
            "trajectory is nonzero but both the initial state and control vanish"
        )
    return sup_y / denom
