"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numerical divergence with 3, and experiment-level failures (a
staircase leg that misses its target, say) with 4.
"""


class ConfigError(ValueError):
    """A configuration file or parameter set is malformed."""


class GridAlignmentError(ConfigError):
    """Grid spacings or horizons violate the characteristic alignment rule."""


class DomainError(ValueError):
    """A coordinate lies outside the model domain."""


class SolverDivergenceError(RuntimeError):
    """A time-stepping loop produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class StagnationError(RuntimeError):
    """An iterative solver stopped making progress."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class InconsistencyError(RuntimeError):
    """A diagnostic ratio is undefined (for instance zero denominator)."""


class ExperimentError(RuntimeError):
    """An experiment ran but failed its own success conditions."""
