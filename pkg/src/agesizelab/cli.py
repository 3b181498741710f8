"""Batch experiment runner.

Usage: ``agesizelab --config run.yaml [--output-dir DIR] [--seed N]``

The experiment kind and all options live in the config file; the flags
only override the output directory and the seed.  Every run writes a
manifest (config hash, derived constants, output files) so results can
be traced back to their configuration.  Exit codes: 0 success, 2
configuration error, 3 numerical divergence, 4 experiment-level
failure; failures also leave a machine-readable ``error.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import solve_adjoint
from .config import build_setup, load_config
from .equilibria import detect_blowup, linf_monitor, solve_steady
from .errors import (
    ConfigError,
    ExperimentError,
    SolverDivergenceError,
    StagnationError,
)
from .forward import TimeStepper, solve_forward
from .geometry import control_time_threshold, coverage_report, time_constants
from .geometry import BoxSupport
from .hum import HUMConfig, cost_blowup_probe, synthesize_control, threshold_sweep
from .io import write_field, write_manifest, write_rows_csv, write_trajectory_csv
from .model import sup_reproductive_number, validate_hypotheses
from .staircase import plan_staircase, run_staircase, support_floor

_EXIT_CONFIG = 2
_EXIT_DIVERGENCE = 3
_EXIT_EXPERIMENT = 4


def _derived_constants(setup) -> dict:
    derived = {"sup_reproductive_number": sup_reproductive_number(setup.params)}
    if setup.support is not None:
        thr = control_time_threshold(setup.support, setup.params)
        derived["control_time_threshold"] = thr.value
        derived["threshold_warnings"] = list(thr.warnings)
        if isinstance(setup.support, BoxSupport):
            tc = time_constants(setup.support, setup.params)
            derived["t0"] = tc.t0
            derived["t1"] = tc.t1
    return derived


def _run_validate(setup, out: Path, rng):
    report = validate_hypotheses(setup.params, setup.hypotheses,
                                 floor=float(setup.option("floor", 1e-8,
                                                          allowed={"floor"})))
    rows = [(name, res.status, res.detail) for name, res in report.results.items()]
    path = out / "validation.csv"
    write_rows_csv(path, ["hypothesis", "status", "detail"], rows)
    derived = {
        "hypotheses": {n: r.status for n, r in report.results.items()},
        "errors": report.errors,
        "warnings": report.warnings,
    }
    return [path], derived


def _run_geometry(setup, out: Path, rng):
    if setup.support is None:
        raise ConfigError("geometry experiment needs a support section")
    horizon = float(setup.option("horizon", 1.0,
                                 allowed={"horizon", "resolution", "fan_size"}))
    resolution = setup.option("resolution", None)
    na = ns = None
    if resolution is not None:
        na, ns = int(resolution[0]), int(resolution[1])
    report = coverage_report(horizon, setup.support, setup.params, na=na, ns=ns,
                             fan_size=int(setup.option("fan_size", 8)))
    path = out / "fate_map.csv"
    write_rows_csv(path, ["a", "s", "fate", "event_time", "renewals"], report.rows())
    return [path], {"coverage_fraction": report.fraction, "horizon": horizon}


def _run_simulate(setup, out: Path, rng):
    allowed = {"horizon", "stride", "diffusion", "export_trajectory", "export_binary"}
    horizon = float(setup.option("horizon", 0.5, allowed=allowed))
    stride = int(setup.option("stride", 1))
    diffusion = bool(setup.option("diffusion", True))
    y0 = setup.initial_state(rng)
    traj = solve_forward(y0, None, horizon, setup.params, setup.grid,
                         diffusion=diffusion, stride=stride)
    outputs = []
    diag = out / "diagnostics.csv"
    write_rows_csv(
        diag, ["t", "mass", "min", "sup"],
        zip(traj.times, traj.mass, traj.min_value, traj.sup_norm),
    )
    outputs.append(diag)
    if setup.option("export_trajectory", False):
        path = out / "trajectory.csv"
        write_trajectory_csv(path, traj, setup.grid)
        outputs.append(path)
    if setup.option("export_binary", True):
        path = out / "trajectory.bin"
        write_field(path, np.stack(traj.snapshots), setup.grid)
        outputs.append(path)
    return outputs, {
        "horizon": horizon,
        "final_mass": float(traj.mass[-1]),
        "min_over_run": float(traj.min_value.min()),
        "linf_constant": linf_monitor(traj),
    }


def _run_adjoint_check(setup, out: Path, rng):
    allowed = {"horizon", "trials", "diffusion"}
    horizon = float(setup.option("horizon", 0.25, allowed=allowed))
    trials = int(setup.option("trials", 5))
    diffusion = bool(setup.option("diffusion", True))
    if setup.support is None:
        raise ConfigError("adjoint-check needs a support section")
    grid, params = setup.grid, setup.params
    mask = grid.support_mask(setup.support)
    stepper = TimeStepper(params, grid, diffusion=diffusion)
    nt = grid.steps(horizon)
    rows = []
    for trial in range(trials):
        y0 = rng.standard_normal(grid.state_shape)
        qt = rng.standard_normal(grid.state_shape)
        controls = rng.standard_normal((nt,) + grid.state_shape) * mask
        traj = solve_forward(y0, controls, horizon, params, grid, stride=nt,
                             stepper=stepper)
        adj = solve_adjoint(qt, horizon, params, grid, stepper=stepper)
        lhs = grid.inner(traj.terminal, qt)
        rhs = grid.inner(y0, adj.initial) + sum(
            grid.dt * grid.inner(controls[k], adj.states[k + 1]) for k in range(nt)
        )
        scale = max(abs(lhs), abs(rhs), 1e-30)
        rows.append((trial, lhs, rhs, abs(lhs - rhs) / scale))
    path = out / "duality.csv"
    write_rows_csv(path, ["trial", "lhs", "rhs", "relative_gap"], rows)
    worst = max(r[3] for r in rows)
    return [path], {"worst_relative_gap": worst, "trials": trials}


def _hum_config(setup, allowed_extra=frozenset()):
    if setup.support is None:
        raise ConfigError(f"{setup.kind} needs a support section")
    allowed = {"horizon", "epsilon", "cg_tol", "cg_max_iter",
               "diffusion"} | allowed_extra
    horizon = setup.option("horizon", None, allowed=allowed)
    if horizon is None:
        raise ConfigError(f"missing key 'horizon' at {setup.kind.replace('-', '_')}")
    return HUMConfig(
        support=setup.support,
        horizon=float(horizon),
        epsilon=float(setup.option("epsilon", 1e-6)),
        cg_tol=float(setup.option("cg_tol", 1e-4)),
        cg_max_iter=int(setup.option("cg_max_iter", 200)),
    )


def _run_hum(setup, out: Path, rng):
    cfg = _hum_config(setup, allowed_extra={"export_control"})
    diffusion = bool(setup.option("diffusion", True))
    y0 = setup.initial_state(rng)
    res = synthesize_control(y0, cfg, setup.params, setup.grid, diffusion=diffusion)
    rows = [(it, j, g) for it, (j, g) in enumerate(zip(res.j_trace, res.grad_trace))]
    path = out / "hum_iterations.csv"
    write_rows_csv(path, ["iteration", "objective", "gradient_norm"], rows)
    outputs = [path]
    if setup.option("export_control", False):
        cpath = out / "control.bin"
        write_field(cpath, res.control, setup.grid)
        outputs.append(cpath)
    return outputs, {
        "residual_norm": res.residual_norm,
        "free_norm": res.free_norm,
        "residual_ratio": res.residual_ratio,
        "control_cost": res.cost,
        "iterations": res.iterations,
        "observability_ratio": res.observability_ratio,
        "converged": res.converged,
    }


def _run_sweep(setup, out: Path, rng):
    if setup.support is None:
        raise ConfigError("sweep needs a support section")
    allowed = {"horizons", "epsilon", "cg_tol", "cg_max_iter", "diffusion",
               "cost_probe"}
    horizons = setup.option("horizons", None, allowed=allowed)
    if not horizons:
        raise ConfigError("missing key 'horizons' at sweep")
    horizons = [setup.grid.snap_horizon(float(t)) for t in horizons]
    diffusion = bool(setup.option("diffusion", True))
    y0 = setup.initial_state(rng)
    rows = threshold_sweep(
        y0, setup.support, horizons, float(setup.option("epsilon", 1e-6)),
        setup.params, setup.grid,
        cg_tol=float(setup.option("cg_tol", 1e-4)),
        cg_max_iter=int(setup.option("cg_max_iter", 200)),
        diffusion=diffusion,
    )
    path = out / "sweep.csv"
    write_rows_csv(
        path,
        ["horizon", "threshold", "residual_norm", "free_norm", "residual_ratio",
         "control_cost", "cg_iterations", "observability_ratio", "error"],
        [(r.horizon, r.threshold, r.residual_norm, r.free_norm, r.residual_ratio,
          r.cost, r.iterations, r.observability_ratio, r.error) for r in rows],
    )
    outputs = [path]
    derived = {
        "control_time_threshold": rows[0].threshold if rows else None,
        "horizons": horizons,
    }
    probe_spec = setup.option("cost_probe", None)
    if probe_spec:
        probe = cost_blowup_probe(
            y0, setup.support, setup.grid.snap_horizon(float(probe_spec["horizon"])),
            [float(e) for e in probe_spec["epsilons"]],
            setup.params, setup.grid,
            cg_tol=float(setup.option("cg_tol", 1e-4)),
            cg_max_iter=int(setup.option("cg_max_iter", 200)),
            diffusion=diffusion,
        )
        ppath = out / "cost_probe.csv"
        write_rows_csv(
            ppath, ["epsilon", "control_cost", "residual_norm"],
            zip(probe.epsilons, probe.costs, probe.residuals),
        )
        outputs.append(ppath)
        derived["cost_slope"] = probe.cost_slope
        derived["residual_slope"] = probe.residual_slope
    return outputs, derived


def _run_blowup(setup, out: Path, rng):
    allowed = {"horizon", "tail_fraction", "diffusion"}
    horizon = float(setup.option("horizon", 5.0, allowed=allowed))
    report = detect_blowup(
        setup.params, setup.grid, horizon,
        tail_fraction=float(setup.option("tail_fraction", 0.5)),
        diffusion=bool(setup.option("diffusion", True)),
    )
    path = out / "growth.csv"
    write_rows_csv(path, ["t", "l2_norm"], zip(report.times, report.norms))
    return [path], {
        "rate": report.rate,
        "verdict": report.verdict,
        "sup_reproductive_number": report.sup_reproduction,
        "reduction_faithful": report.reduction_faithful,
        "warnings": list(report.warnings),
    }


def _run_steady(setup, out: Path, rng):
    allowed = {"control", "tol", "max_iter", "diffusion"}
    control = float(setup.option("control", 0.5, allowed=allowed))
    steady = solve_steady(
        control, setup.params, setup.grid,
        tol=float(setup.option("tol", 1e-10)),
        max_iter=int(setup.option("max_iter", 200)),
        diffusion=bool(setup.option("diffusion", True)),
    )
    path = out / "steady.bin"
    write_field(path, steady.field, setup.grid)
    hist = out / "contraction.csv"
    write_rows_csv(hist, ["iteration", "contraction_factor"],
                   enumerate(steady.contraction_history))
    return [path, hist], {
        "iterations": steady.iterations,
        "residual": steady.residual,
        "sup_reproductive_number": steady.sup_reproduction,
        "measured_contraction": float(steady.contraction_history.max())
        if steady.contraction_history.size else None,
        "floor_value": steady.floor_value,
        "floor_box": steady.floor_box,
        "warnings": list(steady.warnings),
    }


def _run_staircase(setup, out: Path, rng):
    if setup.support is None:
        raise ConfigError("staircase needs a support section")
    allowed = {"control_start", "control_target", "leg_horizon", "epsilon",
               "cg_tol", "cg_max_iter", "delta", "safety", "steady_tol",
               "diffusion", "residual_tolerance"}
    leg_horizon = float(setup.option("leg_horizon", 1.0, allowed=allowed))
    diffusion = bool(setup.option("diffusion", True))
    steady_tol = float(setup.option("steady_tol", 1e-10))
    g_s = solve_steady(float(setup.option("control_start", 0.5)),
                       setup.params, setup.grid, tol=steady_tol,
                       diffusion=diffusion)
    g_f = solve_steady(float(setup.option("control_target", 1.0)),
                       setup.params, setup.grid, tol=steady_tol,
                       diffusion=diffusion)
    hum = HUMConfig(
        support=setup.support, horizon=leg_horizon,
        epsilon=float(setup.option("epsilon", 1e-6)),
        cg_tol=float(setup.option("cg_tol", 1e-4)),
        cg_max_iter=int(setup.option("cg_max_iter", 200)),
    )
    delta = setup.option("delta", None)
    if delta is None:
        delta = support_floor([g_s.field, g_f.field], setup.support, setup.grid)
    plan = plan_staircase(
        g_s, g_f, float(delta), leg_horizon, setup.support, setup.params,
        setup.grid, hum=hum, safety=float(setup.option("safety", 2.0)),
        diffusion=diffusion,
    )
    result = run_staircase(
        plan, setup.params, setup.grid, hum=hum, diffusion=diffusion,
        residual_tolerance=float(setup.option("residual_tolerance", np.inf)),
    )
    path = out / "staircase_legs.csv"
    write_rows_csv(
        path,
        ["leg", "residual_norm", "control_cost", "cg_iterations",
         "min_physical", "sup_difference", "terminal_gap"],
        [(l.index, l.hum.residual_norm, l.hum.cost, l.hum.iterations,
          l.min_physical, l.sup_difference, l.terminal_gap) for l in result.legs],
    )
    derived = {
        "legs": plan.legs,
        "delta": plan.delta,
        "response_ratio": plan.response_ratio,
        "threshold": plan.threshold,
        "final_error": result.final_error,
        "trajectory_min": result.trajectory_min,
        "positivity_ok": result.positivity_ok,
        "warnings": list(plan.warnings),
    }
    if not result.positivity_ok or result.final_error > 0.05:
        raise ExperimentError(
            f"staircase failed: final error {result.final_error:.3e}, "
            f"trajectory min {result.trajectory_min:.3e} "
            f"(leg report in {path})"
        )
    return [path], derived


_RUNNERS = {
    "validate": _run_validate,
    "geometry": _run_geometry,
    "simulate": _run_simulate,
    "adjoint-check": _run_adjoint_check,
    "hum": _run_hum,
    "sweep": _run_sweep,
    "blowup-probe": _run_blowup,
    "steady": _run_steady,
    "staircase": _run_staircase,
}


def run(raw_config: dict, output_dir=None, seed=None) -> dict:
    """Execute one configured experiment; returns the manifest payload."""
    setup = build_setup(raw_config)
    if output_dir is not None:
        setup.output_dir = Path(output_dir)
    if seed is not None:
        setup.seed = int(seed)
    out = setup.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(setup.seed)

    outputs, derived = _RUNNERS[setup.kind](setup, out, rng)
    derived = {**_derived_constants(setup), **derived}
    manifest = write_manifest(
        out / "manifest.json", raw_config, derived,
        [Path(o).name for o in outputs], setup.seed,
    )
    return manifest


def _write_error(output_dir, code: int, exc: Exception):
    try:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "error.json", "w") as fh:
            json.dump(
                {"exit_code": code, "type": type(exc).__name__, "message": str(exc)},
                fh, indent=2,
            )
            fh.write("\n")
    except OSError:
        pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="agesizelab",
        description="Run one configured experiment of the age-size population laboratory.",
    )
    parser.add_argument("--config", required=True, help="YAML/JSON experiment file")
    parser.add_argument("--output-dir", default=None, help="override the output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    args = parser.parse_args(argv)

    try:
        raw = load_config(args.config)
        out_dir = args.output_dir or raw.get("output_dir", "out")
        manifest = run(raw, output_dir=args.output_dir, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        _write_error(args.output_dir or "out", _EXIT_CONFIG, exc)
        return _EXIT_CONFIG
    except SolverDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        _write_error(out_dir, _EXIT_DIVERGENCE, exc)
        return _EXIT_DIVERGENCE
    except (ExperimentError, StagnationError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        _write_error(out_dir, _EXIT_EXPERIMENT, exc)
        return _EXIT_EXPERIMENT
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
