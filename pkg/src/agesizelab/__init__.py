"""Numerical laboratory for an age-size structured population model with
spatial diffusion, renewal births, localized null control, and
positivity-preserving steering between steady states."""

__version__ = "0.1.0"

from .adjoint import AdjointTrajectory, adjoint_step, observed_norm, solve_adjoint
from .equilibria import (
    BlowupReport,
    SteadyState,
    detect_blowup,
    linf_monitor,
    solve_steady,
)
from .forward import (
    NewbornHistory,
    TimeStepper,
    Trajectory,
    solve_forward,
    solve_renewal_volterra,
    step,
)
from .geometry import (
    BoxSupport,
    CharFate,
    FateKind,
    ObliqueSupport,
    Threshold,
    TimeConstants,
    classify_region,
    control_time_threshold,
    coverage_report,
    fate_is_covered,
    time_constants,
    trace_backward_characteristic,
)
from .grids import DiffusionOperator, Grid, build_grid, neumann_laplacian, renewal_integral
from .hum import (
    HUMConfig,
    HUMResult,
    cost_blowup_probe,
    synthesize_control,
    threshold_sweep,
)
from .model import (
    HYPOTHESES,
    MortalityRate,
    PopulationParams,
    ValidationReport,
    constant_mortality,
    linear_survival_mortality,
    renewal_profile,
    reproductive_number,
    sup_reproductive_number,
    tabulated_mortality,
    uniform_fertility,
    validate_hypotheses,
    zero_mortality,
)
from .staircase import (
    StaircasePlan,
    StaircaseResult,
    estimate_response_ratio,
    plan_staircase,
    run_staircase,
    support_floor,
)
