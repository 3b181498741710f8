"""File formats: CSV tables, binary field dumps, and run manifests.

Binary dump layout (all little-endian):

    bytes 0-3   magic b"ASLB"
    uint32      format version (1)
    uint32      spatial dimension d (1 or 2)
    uint32      nx (cells per spatial axis)
    uint32      na
    uint32      ns
    uint32      nt (number of stored time levels; 1 for a single field)
    float64 x5  dx, da, ds, dt, omega_length
    payload     nt * nx^d * na * ns float64 values, row-major
                (time, space, age, size)

CSV floats are written with ``repr`` (shortest round-trip), so reruns
with identical inputs produce bit-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .grids import Grid

__all__ = [
    "write_field",
    "read_field",
    "write_trajectory_csv",
    "write_rows_csv",
    "write_manifest",
    "config_hash",
]

_MAGIC = b"ASLB"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII5d")


def _write_payload(path: Path, stack: np.ndarray, grid: Grid):
    nt = stack.shape[0]
    header = _HEADER.pack(
        _MAGIC, _VERSION, grid.spatial_dim, grid.nx, grid.na, grid.ns, nt,
        grid.dx, grid.da, grid.ds, grid.dt, grid.omega_length,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(stack, dtype="<f8").tobytes())


def write_field(path, field: np.ndarray, grid: Grid):
    """Dump one state field (or a (nt, ...) stack) in the binary format."""
    path = Path(path)
    stack = np.asarray(field, dtype=float)
    if stack.shape == grid.state_shape:
        stack = stack[None]
    elif stack.ndim != 4 or stack.shape[1:] != grid.state_shape:
        raise ValueError(
            f"field shape {stack.shape} matches neither {grid.state_shape} "
            f"nor a (nt, *state) stack"
        )
    _write_payload(path, stack, grid)


def read_field(path):
    """Read a binary dump; returns (values, header_dict).

    ``values`` has shape (nt, nx^d, na, ns); squeeze the leading axis
    for single fields.
    """
    path = Path(path)
    raw = path.read_bytes()
    magic, version, dim, nx, na, ns, nt, dx, da, ds, dt, omega = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path} is not a field dump (bad magic {magic!r})")
    if version != _VERSION:
        raise ValueError(f"unsupported dump version {version}")
    n_space = nx**dim
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).copy()
    values = values.reshape(nt, n_space, na, ns)
    header = dict(
        spatial_dim=dim, nx=nx, na=na, ns=ns, nt=nt,
        dx=dx, da=da, ds=ds, dt=dt, omega_length=omega,
    )
    return values, header


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows_csv(path, header, rows):
    """Write rows with deterministic float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_trajectory_csv(path, traj, grid: Grid):
    """Long-format export: columns t, x, a, s, y (one row per cell)."""
    xs = grid.x_centers
    ages = grid.age_centers
    sizes = grid.size_centers

    def rows():
        for step, snap in zip(traj.snapshot_steps, traj.snapshots):
            t = step * grid.dt
            for ix in range(grid.n_space):
                if grid.spatial_dim == 1:
                    xlabel = xs[ix]
                else:
                    xlabel = f"{xs[ix // grid.nx]};{xs[ix % grid.nx]}"
                for ia, a in enumerate(ages):
                    for js, s in enumerate(sizes):
                        yield (t, xlabel, a, s, snap[ix, ia, js])

    write_rows_csv(path, ["t", "x", "a", "s", "y"], rows())


def config_hash(config: dict) -> str:
    """Stable hash of a configuration mapping."""
    canon = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(canon).hexdigest()


def write_manifest(path, config: dict, derived: dict, outputs, seed: int | None):
    """Run manifest: config hash, derived constants, output files.

    Deterministic (no timestamps), so identical runs produce identical
    manifests.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config_hash": config_hash(config),
        "seed": seed,
        "derived": derived,
        "outputs": sorted(str(o) for o in outputs),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload
