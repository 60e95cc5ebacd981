"""Experiment configuration: flat keys, YAML (or JSON) text, ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .fpe import DIRAC_SIGMA_FACTOR, PotentialSpec
from .mesh import SubgridRestriction, TimeGrid, UniformGrid1D, build_grid, build_time_grid, restrict_to_domain

__all__ = ["ExperimentConfig", "parse_config", "PROFILES"]

# interval counts on (-2, 2): coarse matches the published code, full the figures
PROFILES = {
    "coarse": {"n": 500, "m": 500},
    "full": {"n": 2000, "m": 500},
}

CONSTRAINT_AXES = ("zero_mean_in_x", "zero_mean_in_y")
RESOLVENT_MODES = ("full", "restricted")


@dataclass(frozen=True)
class ExperimentConfig:
    # dynamics
    potential: str = "double_well"
    curvature: float = 1.0
    potential_file: str | None = None
    epsilon: float = 0.25
    T: float = 1.0
    # meshes
    profile: str = "coarse"
    a: float = 2.0
    n: int | None = None
    m: int | None = None
    dirac_sigma: float | None = None
    # perturbation domain and basis
    d: float = 1.2
    I: int = 35
    J: int = 35
    constraint_axis: str = "zero_mean_in_x"
    resolvent: str = "full"
    delta: tuple = (0.5,)
    # observable
    observable: str = "gaussian"
    obs_mu: float = 0.0
    obs_sigma: float = 0.1
    observable_file: str | None = None
    # verification
    lr_deltas: tuple = (0.4, 0.2, 0.1, 0.05)
    n_samples: int = 1000
    seed: int = 20240917
    # tolerances
    row_mass_tol: float = 1e-2
    positivity_tol: float = 1e-8
    eig_tol: float = 1e-10
    max_iter: int = 200000
    symmetry_tol_f0: float = 1e-6
    symmetry_tol_fdelta: float = 1e-4
    zero_mean_tol: float = 1e-8
    optimality_tol: float = 1e-9
    max_condition: float = 1e12
    # io / execution
    output_dir: str = "out"
    threads: int = 1

    def __post_init__(self):
        prof = PROFILES.get(self.profile)
        if prof is None:
            raise ConfigurationError(f"profile must be one of {sorted(PROFILES)}", field="profile")
        if self.n is None:
            object.__setattr__(self, "n", prof["n"])
        if self.m is None:
            object.__setattr__(self, "m", prof["m"])
        object.__setattr__(self, "delta", _as_tuple(self.delta, "delta"))
        object.__setattr__(self, "lr_deltas", _as_tuple(self.lr_deltas, "lr_deltas"))
        self.validate()

    # ------------------------------------------------------------------
    def validate(self):
        _positive(self, "epsilon", "T", "a", "d", "obs_sigma", "eig_tol", "row_mass_tol", "curvature")
        for key in ("n", "m", "I", "J", "max_iter", "n_samples", "threads", "seed"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigurationError(f"{key} must be an integer, got {v!r}", field=key)
        if self.n % 2:
            raise ConfigurationError("n must be even", field="n")
        if self.n < 2:
            raise ConfigurationError("n must be >= 2", field="n")
        if self.m < 1:
            raise ConfigurationError("m must be >= 1", field="m")
        if self.I < 1:
            raise ConfigurationError("I must be >= 1", field="I")
        if self.J < 0:
            raise ConfigurationError("J must be >= 0", field="J")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1", field="threads")
        if self.constraint_axis not in CONSTRAINT_AXES:
            raise ConfigurationError(f"constraint_axis must be one of {CONSTRAINT_AXES}", field="constraint_axis")
        if self.resolvent not in RESOLVENT_MODES:
            raise ConfigurationError(f"resolvent must be one of {RESOLVENT_MODES}", field="resolvent")
        if self.observable not in ("gaussian", "tabulated"):
            raise ConfigurationError("observable must be 'gaussian' or 'tabulated'", field="observable")
        if self.observable == "tabulated" and not self.observable_file:
            raise ConfigurationError("tabulated observable needs observable_file", field="observable_file")
        if self.potential == "tabulated" and not self.potential_file:
            raise ConfigurationError("tabulated potential needs potential_file", field="potential_file")
        if self.dirac_sigma is not None and not self.dirac_sigma > 0:
            raise ConfigurationError("dirac_sigma must be positive", field="dirac_sigma")
        if any(x < 0 for x in self.delta):
            raise ConfigurationError("delta values must be >= 0", field="delta")
        # grid-level checks (d snapped against the mesh)
        restrict_to_domain(self.grid, self.d)
        self.potential_spec

    # ------------------------------------------------------------------
    @property
    def grid(self) -> UniformGrid1D:
        return build_grid(self.a, self.n)

    @property
    def timegrid(self) -> TimeGrid:
        return build_time_grid(self.T, self.m)

    @property
    def restriction(self) -> SubgridRestriction:
        return restrict_to_domain(self.grid, self.d)

    @property
    def sigma(self) -> float:
        """Width of the Dirac surrogate actually used."""
        return DIRAC_SIGMA_FACTOR * self.grid.dx if self.dirac_sigma is None else float(self.dirac_sigma)

    @property
    def potential_spec(self) -> PotentialSpec:
        if self.potential == "tabulated":
            y, dv = _read_table(self.potential_file, "potential_file")
            return PotentialSpec("tabulated", self.epsilon, table_y=tuple(y), table_dV=tuple(dv))
        return PotentialSpec(self.potential, self.epsilon, curvature=self.curvature)

    def observable_samples(self, y) -> np.ndarray:
        return self.observable_spec.sample(y)

    @property
    def observable_spec(self):
        from .optimal import ObservableSpec

        if self.observable == "tabulated":
            y, v = _read_table(self.observable_file, "observable_file")
            return ObservableSpec("tabulated", table_y=tuple(y), table_values=tuple(v))
        return ObservableSpec("gaussian", mu=self.obs_mu, sigma=self.obs_sigma)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["delta"] = list(self.delta)
        out["lr_deltas"] = list(self.lr_deltas)
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def kernel_key(self) -> str:
        """Digest of every setting the kernel matrix depends on."""
        keys = ("potential", "curvature", "epsilon", "T", "a", "n", "m")
        payload = {k: getattr(self, k) for k in keys}
        payload["sigma"] = self.sigma
        if self.potential == "tabulated":
            payload["table"] = [list(map(float, c)) for c in _read_table(self.potential_file, "potential_file")]
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _positive(cfg, *keys):
    for key in keys:
        v = getattr(cfg, key)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v) or v <= 0:
            raise ConfigurationError(f"{key} must be a positive number, got {v!r}", field=key)


def _as_tuple(value, key):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),)
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key} must be a number or list of numbers", field=key) from None
    return out


def _read_table(path, key):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {key}: {exc}", field=key) from None
    if data.shape[1] < 2:
        raise ConfigurationError(f"{key} needs two columns", field=key)
    return data[:, 0], data[:, 1]


def _coerce(key, value):
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown key {key!r}", field=key)
    if value is None:
        return None
    default = _FIELDS[key].default
    if key in ("delta", "lr_deltas"):
        return value
    if isinstance(default, bool):
        return value
    if isinstance(default, float) or key in ("dirac_sigma",):
        if isinstance(value, str):
            # PyYAML reads "1e-8" (no dot) as a string
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key} must be a number, got {value!r}", field=key)
        return float(value)
    if isinstance(default, int) or key in ("n", "m"):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key} must be an integer, got {value!r}", field=key)
        return value
    if isinstance(default, str) or key in ("potential_file", "observable_file"):
        if not isinstance(value, str):
            raise ConfigurationError(f"{key} must be a string, got {value!r}", field=key)
        return value
    return value


def parse_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a flat YAML/JSON mapping, apply ``key=value`` overrides, validate.

    An empty or missing-path config yields the symmetric double-well defaults.
    """
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {p} does not exist", field="config")
        text = p.read_text()
        try:
            loaded = yaml.safe_load(text) if text.strip() else {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse {p}: {exc}", field="config") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError("config must be a mapping of flat keys", field="config")
        # a run report embeds its config under "config"
        if "config" in loaded and isinstance(loaded["config"], dict):
            loaded = loaded["config"]
        raw.update(loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value", field=item)
        key, text = item.split("=", 1)
        key = key.strip()
        try:
            raw[key] = yaml.safe_load(text)
        except yaml.YAMLError:
            raw[key] = text
    values = {k: _coerce(k, v) for k, v in raw.items()}
    try:
        return ExperimentConfig(**values)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
