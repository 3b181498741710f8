"""Grids and discrete operators shared by the solvers.

Age, size, and time share one spacing (da = ds = dt), so transport along
characteristics is an exact index shift with zero numerical diffusion:
this mirrors the unit-speed straight characteristics of the continuous
model.  All nodes are cell-centered, which keeps midpoint quadrature
natural and never samples the singular mortality endpoints.

State fields are dense arrays of shape (n_space, na, ns) where n_space
is the flattened spatial cell count (nx in one dimension, nx * nx in
two).  Spatial diffusion uses the mirrored-ghost Neumann Laplacian; the
implicit Euler step (I - dt L)^{-1} is precomputed, symmetrized, and
entrywise nonnegative, which is what makes the scheme positivity
preserving and exactly self-adjoint in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, GridAlignmentError
from .model import PopulationParams, renewal_profile

__all__ = [
    "Grid",
    "build_grid",
    "neumann_laplacian_1d",
    "neumann_laplacian",
    "DiffusionOperator",
    "renewal_integral",
]

_DENSE_LIMIT = 4096  # spatial cells; beyond this the solve stays factorized


@dataclass(frozen=True)
class Grid:
    """Tensor grid for fields y[x, a, s] plus the aligned time step."""

    max_age: float
    max_size: float
    na: int
    ns: int
    nx: int
    spatial_dim: int = 1
    omega_length: float = 1.0
    nt: int | None = None  # optional stored horizon step count

    def __post_init__(self):
        if self.spatial_dim not in (1, 2):
            raise GridAlignmentError("spatial_dim must be 1 or 2")
        da, ds = self.max_age / self.na, self.max_size / self.ns
        if abs(da - ds) > 1e-12 * max(da, ds):
            want = Fraction(self.max_size / self.max_age).limit_denominator(10**6)
            raise GridAlignmentError(
                f"characteristic alignment requires max_age/na == max_size/ns; "
                f"got da = {da}, ds = {ds}.  Pick ns = na * {want} "
                f"(for na = {self.na}: ns = {self.na * want})"
            )

    @property
    def da(self) -> float:
        return self.max_age / self.na

    @property
    def ds(self) -> float:
        return self.max_size / self.ns

    @property
    def dt(self) -> float:
        return self.da

    @property
    def dx(self) -> float:
        return self.omega_length / self.nx

    @property
    def n_space(self) -> int:
        return self.nx ** self.spatial_dim

    @property
    def state_shape(self) -> tuple:
        return (self.n_space, self.na, self.ns)

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.spatial_dim * self.da * self.ds

    @property
    def age_centers(self) -> np.ndarray:
        return (np.arange(self.na) + 0.5) * self.da

    @property
    def size_centers(self) -> np.ndarray:
        return (np.arange(self.ns) + 0.5) * self.ds

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    def zeros(self) -> np.ndarray:
        return np.zeros(self.state_shape)

    def steps(self, horizon: float) -> int:
        """Number of time steps for a grid-aligned horizon.

        Raises with the two nearest valid horizons when the requested
        one is not a multiple of dt.
        """
        ratio = horizon / self.dt
        n = round(ratio)
        if n <= 0 or abs(ratio - n) > 1e-9:
            lo, hi = int(np.floor(ratio)), int(np.ceil(ratio))
            raise GridAlignmentError(
                f"horizon {horizon} is not a multiple of dt = {self.dt} "
                f"({ratio} steps); nearest valid horizons are "
                f"{lo * self.dt} or {hi * self.dt}"
            )
        return n

    def snap_horizon(self, horizon: float) -> float:
        """Nearest grid-aligned horizon (at least one step)."""
        return max(1, round(horizon / self.dt)) * self.dt

    def check_matches(self, params: PopulationParams):
        if (params.na, params.ns) != (self.na, self.ns) or (
            abs(params.max_age - self.max_age) > 1e-12
            or abs(params.max_size - self.max_size) > 1e-12
        ):
            raise DomainError(
                "grid and parameter tabulation disagree: "
                f"grid ({self.na}, {self.ns}) on [0,{self.max_age})x[0,{self.max_size}), "
                f"params ({params.na}, {params.ns}) on "
                f"[0,{params.max_age})x[0,{params.max_size})"
            )

    def spatial_mask(self, omega) -> np.ndarray:
        """Indicator of the spatial patch omega over flattened cells."""
        intervals = tuple(omega)
        if len(intervals) != self.spatial_dim:
            raise DomainError(
                f"spatial patch has {len(intervals)} intervals, grid is "
                f"{self.spatial_dim}-dimensional"
            )
        axes = []
        for lo, hi in intervals:
            axes.append((self.x_centers > lo) & (self.x_centers < hi))
        if self.spatial_dim == 1:
            return axes[0].astype(float)
        return np.outer(axes[0], axes[1]).ravel().astype(float)

    def support_mask(self, support) -> np.ndarray:
        """Indicator of a control support over (n_space, na, ns) cells."""
        a = self.age_centers[:, None]
        s = self.size_centers[None, :]
        cross = np.zeros((self.na, self.ns), dtype=bool)
        for i in range(self.na):
            for j in range(self.ns):
                cross[i, j] = support.membership(float(a[i, 0]), float(s[0, j]))
        spatial = self.spatial_mask(support.omega)
        return spatial[:, None, None] * cross[None, :, :].astype(float)

    def inner(self, y: np.ndarray, z: np.ndarray) -> float:
        """Cell-volume weighted L2 inner product."""
        return float(np.vdot(y, z)) * self.cell_volume

    def norm(self, y: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(y, y), 0.0)))


def build_grid(
    max_age: float,
    max_size: float,
    na: int,
    ns: int,
    nx: int,
    spatial_dim: int = 1,
    omega_length: float = 1.0,
    horizon: float | None = None,
) -> Grid:
    """Construct a characteristic-aligned grid, validating the horizon.

    Transport is an exact shift on such grids, so there is no CFL
    restriction; the only constraints are da == ds (== dt) and, when a
    horizon is supplied, that it is a whole number of steps.
    """
    grid = Grid(
        max_age=max_age,
        max_size=max_size,
        na=na,
        ns=ns,
        nx=nx,
        spatial_dim=spatial_dim,
        omega_length=omega_length,
    )
    if horizon is not None:
        nt = grid.steps(horizon)
        grid = Grid(
            max_age=max_age,
            max_size=max_size,
            na=na,
            ns=ns,
            nx=nx,
            spatial_dim=spatial_dim,
            omega_length=omega_length,
            nt=nt,
        )
    return grid


def neumann_laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    """Second-difference Laplacian with mirrored ghost cells.

    Rows sum to zero (constants are in the nullspace) and the matrix is
    symmetric; the spectrum is nonpositive.
    """
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr") / h**2


def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    """Neumann Laplacian on the flattened spatial cells of a grid."""
    l1 = neumann_laplacian_1d(grid.nx, grid.dx)
    if grid.spatial_dim == 1:
        return l1
    eye = sp.identity(grid.nx, format="csr")
    return (sp.kron(l1, eye) + sp.kron(eye, l1)).tocsr()


class DiffusionOperator:
    """Implicit Euler diffusion step: multiply by (I - dt L)^{-1}.

    For small spatial dimensions the inverse is stored densely and
    symmetrized, so applying it is a single matmul that is exactly
    self-adjoint; larger problems fall back to a sparse factorization.
    The inverse of this diagonally dominant matrix is entrywise
    nonnegative with unit row sums, hence positivity and spatial mass
    are preserved.
    """

    def __init__(self, grid: Grid, dt: float | None = None):
        dt = grid.dt if dt is None else dt
        lap = neumann_laplacian(grid)
        system = (sp.identity(grid.n_space, format="csr") - dt * lap).tocsc()
        if grid.n_space <= _DENSE_LIMIT:
            dense = np.linalg.inv(system.toarray())
            self._matrix = (dense + dense.T) / 2.0
            self._solve = None
        else:
            self._matrix = None
            self._solve = spla.factorized(system)
        self.n_space = grid.n_space

    def apply(self, state: np.ndarray) -> np.ndarray:
        """Apply to (n_space, ...) arrays, cell by cell in (a, s)."""
        flat = state.reshape(self.n_space, -1)
        if self._matrix is not None:
            out = self._matrix @ flat
        else:
            out = np.column_stack([self._solve(flat[:, k]) for k in range(flat.shape[1])])
        return out.reshape(state.shape)


def renewal_integral(state_slice: np.ndarray, params: PopulationParams, newborn_size_index: int | None = None):
    """Newborn density produced by one population slice.

    ``state_slice`` has shape (na, ns) (a fixed spatial point and time).
    Returns the full newborn size profile, or a single value when
    ``newborn_size_index`` is given.  Midpoint quadrature in parent age
    and parent size; nonnegative whenever the slice is.
    """
    profile = renewal_profile(state_slice, params)
    if newborn_size_index is None:
        return profile
    return float(profile[newborn_size_index])
