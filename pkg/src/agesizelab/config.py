"""Configuration schema for the batch experiment runner.

One YAML (or JSON) file describes a run: the model rates, the grid, the
control support, which experiment to perform, and its options.  Unknown
keys are rejected with the offending path, so typos fail fast.  All
defaults live in this module; the README documents the schema.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .geometry import BoxSupport, ObliqueSupport
from .grids import Grid, build_grid
from .model import (
    HYPOTHESES,
    MortalityRate,
    PopulationParams,
    constant_mortality,
    linear_survival_mortality,
    tabulated_mortality,
    uniform_fertility,
    zero_mortality,
)

__all__ = ["load_config", "ExperimentSetup", "build_setup", "EXPERIMENT_KINDS"]

EXPERIMENT_KINDS = (
    "validate",
    "geometry",
    "simulate",
    "adjoint-check",
    "hum",
    "sweep",
    "blowup-probe",
    "steady",
    "staircase",
)


def _require_keys(section: dict, allowed: set, required: set, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path} must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} at {path}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"missing key {sorted(missing)[0]!r} at {path}")


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return raw


def _load_mortality(section, length: float, n: int, path: str) -> MortalityRate:
    _require_keys(section, {"preset", "rate", "values", "csv"}, set(), path)
    if "preset" in section:
        preset = section["preset"]
        if preset == "linear-survival":
            return linear_survival_mortality(length, n)
        if preset == "zero":
            return zero_mortality(length, n)
        if preset == "constant":
            if "rate" not in section:
                raise ConfigError(f"missing key 'rate' at {path} (constant preset)")
            return constant_mortality(float(section["rate"]), length, n)
        raise ConfigError(f"unknown mortality preset {preset!r} at {path}")
    if "values" in section:
        values = np.asarray(section["values"], dtype=float)
        if values.size != n:
            raise ConfigError(
                f"{path}.values has {values.size} entries, grid needs {n}"
            )
        return tabulated_mortality(values, length)
    if "csv" in section:
        csv_path = Path(section["csv"])
        if not csv_path.exists():
            raise ConfigError(f"{path}.csv: file {csv_path} does not exist")
        values = np.loadtxt(csv_path, delimiter=",").ravel()
        if values.size != n:
            raise ConfigError(
                f"{path}.csv has {values.size} entries, grid needs {n}"
            )
        return tabulated_mortality(values, length)
    raise ConfigError(f"{path} needs one of: preset, values, csv")


def _load_fertility(section, na, ns, max_age, max_size, min_age, cutoff, path):
    _require_keys(section, {"preset", "level", "csv"}, set(), path)
    if "preset" in section:
        if section["preset"] != "uniform":
            raise ConfigError(f"unknown fertility preset {section['preset']!r} at {path}")
        level = float(section.get("level", 1.0))
        return uniform_fertility(na, ns, max_age, max_size, level, min_age, cutoff)
    if "csv" in section:
        csv_path = Path(section["csv"])
        if not csv_path.exists():
            raise ConfigError(f"{path}.csv: file {csv_path} does not exist")
        table = np.loadtxt(csv_path, delimiter=",")
        if table.shape != (na * ns, ns):
            raise ConfigError(
                f"{path}.csv has shape {table.shape}, expected ({na * ns}, {ns}) "
                "(age-major parent index by newborn size)"
            )
        return table.reshape(na, ns, ns)
    raise ConfigError(f"{path} needs one of: preset, csv")


class ExperimentSetup:
    """Validated configuration turned into model objects."""

    def __init__(self, raw: dict):
        _require_keys(
            raw,
            {"experiment", "seed", "output_dir", "model", "grid", "support",
             "initial_state"} | {k.replace("-", "_") for k in EXPERIMENT_KINDS},
            {"experiment", "model", "grid"},
            "config",
        )
        self.raw = raw
        self.kind = raw["experiment"]
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(
                f"unknown experiment kind {self.kind!r}; expected one of "
                f"{', '.join(EXPERIMENT_KINDS)}"
            )
        self.seed = int(raw.get("seed", 0))
        self.output_dir = Path(raw.get("output_dir", "out"))

        gsec = raw["grid"]
        _require_keys(
            gsec, {"nx", "na", "ns", "spatial_dim", "omega_length"},
            {"nx", "na", "ns"}, "grid",
        )
        msec = raw["model"]
        _require_keys(
            msec,
            {"max_age", "max_size", "min_fertility_age", "max_newborn_size",
             "age_mortality", "size_mortality", "fertility", "hypotheses"},
            {"age_mortality", "size_mortality", "fertility"},
            "model",
        )
        max_age = float(msec.get("max_age", 1.0))
        max_size = float(msec.get("max_size", 1.0))
        na, ns, nx = int(gsec["na"]), int(gsec["ns"]), int(gsec["nx"])
        self.grid: Grid = build_grid(
            max_age, max_size, na, ns, nx,
            spatial_dim=int(gsec.get("spatial_dim", 1)),
            omega_length=float(gsec.get("omega_length", 1.0)),
        )
        min_age = float(msec.get("min_fertility_age", 0.0))
        cutoff = float(msec.get("max_newborn_size", max_size))
        self.params = PopulationParams(
            max_age=max_age,
            max_size=max_size,
            age_mortality=_load_mortality(msec["age_mortality"], max_age, na, "model.age_mortality"),
            size_mortality=_load_mortality(msec["size_mortality"], max_size, ns, "model.size_mortality"),
            fertility=_load_fertility(
                msec["fertility"], na, ns, max_age, max_size, min_age, cutoff,
                "model.fertility",
            ),
            min_fertility_age=min_age,
            max_newborn_size=cutoff,
        )
        self.hypotheses = msec.get("hypotheses", sorted(HYPOTHESES))
        unknown = set(self.hypotheses) - HYPOTHESES
        if unknown:
            raise ConfigError(
                f"unknown hypothesis tag {sorted(unknown)[0]!r} at model.hypotheses"
            )

        self.support = None
        if "support" in raw:
            self.support = self._load_support(raw["support"])

        self.initial_spec = raw.get("initial_state", {"preset": "bump"})
        self.options = raw.get(self.kind.replace("-", "_"), {})
        if not isinstance(self.options, dict):
            raise ConfigError(f"{self.kind.replace('-', '_')} must be a mapping")

    def _load_support(self, section):
        _require_keys(
            section, {"kind", "a1", "a2", "s1", "s2", "a0", "s_e", "omega"},
            {"kind"}, "support",
        )
        omega = section.get("omega", [[0.0, self.grid.omega_length]])
        omega = tuple(tuple(float(v) for v in pair) for pair in omega)
        try:
            if section["kind"] == "box":
                return BoxSupport(
                    a1=float(section["a1"]), a2=float(section["a2"]),
                    s1=float(section["s1"]), s2=float(section["s2"]),
                    omega=omega,
                )
            if section["kind"] == "oblique":
                return ObliqueSupport(
                    a1=float(section["a1"]), a2=float(section["a2"]),
                    a0=float(section["a0"]), s_e=float(section["s_e"]),
                    omega=omega,
                )
        except KeyError as exc:
            raise ConfigError(f"missing key {exc.args[0]!r} at support") from None
        except ValueError as exc:
            raise ConfigError(f"invalid support: {exc}") from None
        raise ConfigError(f"unknown support kind {section['kind']!r}")

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        spec = self.initial_spec
        _require_keys(spec, {"preset", "center", "width", "value"}, {"preset"},
                      "initial_state")
        preset = spec["preset"]
        if preset == "bump":
            from .presets import bump_initial_state

            center = tuple(spec.get("center", (0.3, 0.4)))
            return bump_initial_state(self.grid, center=center,
                                      width=float(spec.get("width", 0.15)))
        if preset == "uniform":
            return np.full(self.grid.state_shape, float(spec.get("value", 1.0)))
        if preset == "random":
            return rng.random(self.grid.state_shape)
        raise ConfigError(f"unknown initial_state preset {preset!r}")

    def option(self, key, default=None, allowed: set | None = None):
        if allowed is not None:
            unknown = set(self.options) - allowed
            if unknown:
                raise ConfigError(
                    f"unknown key {sorted(unknown)[0]!r} at "
                    f"{self.kind.replace('-', '_')}"
                )
        return self.options.get(key, default)


def build_setup(raw: dict) -> ExperimentSetup:
    return ExperimentSetup(raw)
