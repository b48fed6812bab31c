"""Experiment configuration: flat INI sections with typed, validated fields.

The file format is diff-friendly key/value text (configparser).  A config
round-trips losslessly through ``ExperimentConfig.to_ini`` / ``from_ini``;
every field is representable as a string and parsed back to the same value.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from .adjoint import CostWeights
from .exceptions import ConfigError
from .forward import TimeGrid
from .grids import build_grid_1d, build_grid_2d
from .models import (CUBIC_SINK, ActuatorDesign, HeatShapeActuator,
                     KsGaussianActuator, ModelSpec, make_heat_model, make_ks_model)
from .optimize import AdmissibleSets, OptimizerConfig

_SCHEMA: dict[str, dict[str, tuple]] = {
    # section -> key -> (type, default); type in {float, int, bool, str, "floats", "optfloat"}
    "model": {
        "kind": (str, "ks"),
        "lambda": (float, 30.0),
        "nonlinearity": (str, "cubic"),
        "linear": (bool, False),
    },
    "grid": {
        "n": (int, 128),
        "nx": (int, 32),
        "ny": (int, 32),
        "lx": (float, 1.0),
        "ly": (float, 1.0),
        "dirichlet": (str, "left,right,bottom,top"),
    },
    "time": {
        "tau": (float, 1.0),
        "nt": (int, 400),
    },
    "cost": {
        "q_scale": (float, 1.0),
        "r_scale": (float, 1.0),
    },
    "sets": {
        "r1": (float, 10.0),
        "r2": (float, 1.0),
        "u_box": ("optfloat", None),
    },
    "actuator": {
        "omega": (float, 0.05),
        "kad_low": (float, 0.1),
        "kad_high": (float, 0.9),
        "basis_per_axis": (int, 3),
        "r_init": ("floats", ()),
    },
    "initial_condition": {
        "kind": (str, "sine"),
        "amplitude": (float, 0.1),
        "center": (float, 0.5),
        "width": (float, 0.07),
        # second-harmonic admixture; breaks the mirror symmetry that would
        # make the actuator-location gradient vanish identically at r = 1/2
        "second_mode": (float, 0.3),
    },
    "optimizer": {
        "max_iters": (int, 2000),
        "tol": (float, 1e-5),
        "armijo_c1": (float, 1e-4),
        "backtrack": (float, 0.5),
        "step0": (float, 1.0),
        "seed": (int, 0),
        "multi_start": (int, 5),
        "mode": (str, "joint"),
        "optimize_design": (bool, True),
    },
    "riccati": {
        "nt": (int, 400),
        "check_every": (int, 10),
    },
    "output": {
        "dir": (str, "out"),
        "jobs": (int, 1),
    },
}


def _parse(section: str, key: str, kind, raw: str):
    name = f"{section}.{key}"
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "optfloat":
            return None if raw.strip() == "" else float(raw)
        if kind == "floats":
            raw = raw.strip()
            return tuple(float(tok) for tok in raw.split(",")) if raw else ()
        return raw.strip()
    except ValueError as err:
        raise ConfigError(name, str(err)) from None


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    """All knobs of one experiment, keyed as 'section.key'."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {}
        for sec, keys in _SCHEMA.items():
            for key, (_, default) in keys.items():
                merged[f"{sec}.{key}"] = default
        unknown = sorted(set(self.values) - set(merged))
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        merged.update(self.values)
        self.values = merged
        self.validate()

    def __getitem__(self, name: str):
        if name not in self.values:
            raise ConfigError(name, "unknown field")
        return self.values[name]

    def with_value(self, name: str, value) -> "ExperimentConfig":
        if name not in self.values:
            raise ConfigError(name, "unknown field")
        sec, key = name.split(".", 1)
        kind, _ = _SCHEMA[sec][key]
        if isinstance(value, str):
            value = _parse(sec, key, kind, value)
        elif kind == "floats":
            value = tuple(float(v) for v in np.atleast_1d(value))
        elif kind is int and not isinstance(value, bool):
            value = int(value)
        elif kind is float:
            value = float(value)
        new = dict(self.values)
        new[name] = value
        return ExperimentConfig(values=new)

    def validate(self) -> None:
        v = self.values
        if v["model.kind"] not in ("ks", "heat"):
            raise ConfigError("model.kind", f"expected 'ks' or 'heat', got {v['model.kind']!r}")
        if v["model.nonlinearity"] not in ("cubic", "none"):
            raise ConfigError("model.nonlinearity", "expected 'cubic' or 'none'")
        if v["grid.n"] < 4 or v["grid.nx"] < 4 or v["grid.ny"] < 4:
            raise ConfigError("grid.n", "grids need at least 4 nodes per axis")
        if v["time.nt"] < 2 or v["time.tau"] <= 0:
            raise ConfigError("time.nt", "need nt >= 2 and tau > 0")
        if v["cost.r_scale"] <= 0:
            raise ConfigError("cost.r_scale", "input weight must be positive")
        if not (0 < v["actuator.kad_low"] < v["actuator.kad_high"] < 1):
            raise ConfigError("actuator.kad_low", "need 0 < a < b < 1")
        if v["sets.r1"] <= 0 or v["sets.r2"] <= 0:
            raise ConfigError("sets.r1", "ball radii must be positive")
        if v["optimizer.mode"] not in ("joint", "alternating"):
            raise ConfigError("optimizer.mode", "expected 'joint' or 'alternating'")
        if v["initial_condition.kind"] not in ("sine", "bump", "zero"):
            raise ConfigError("initial_condition.kind", "expected sine|bump|zero")
        if v["output.jobs"] < 1:
            raise ConfigError("output.jobs", "worker count must be >= 1")

    # --- serialization -------------------------------------------------

    @staticmethod
    def from_ini(path) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as err:
            raise ConfigError("(file)", f"INI parse failure: {err}") from None
        vals = {}
        for sec in parser.sections():
            if sec not in _SCHEMA:
                raise ConfigError(sec, "unknown section")
            for key, raw in parser.items(sec):
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"{sec}.{key}", "unknown field")
                kind, _ = _SCHEMA[sec][key]
                vals[f"{sec}.{key}"] = _parse(sec, key, kind, raw)
        return ExperimentConfig(values=vals)

    def to_ini(self, path=None) -> str:
        parser = configparser.ConfigParser()
        for sec, keys in _SCHEMA.items():
            parser[sec] = {key: _render(self.values[f"{sec}.{key}"]) for key in keys}
        buf = io.StringIO()
        parser.write(buf)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return dict(sorted(self.values.items(), key=lambda kv: kv[0]))

    # --- builders -------------------------------------------------------

    @property
    def is_ks(self) -> bool:
        return self.values["model.kind"] == "ks"

    def build_grid(self):
        if self.is_ks:
            return build_grid_1d(self["grid.n"])
        sides = tuple(s.strip() for s in self["grid.dirichlet"].split(",") if s.strip())
        return build_grid_2d(self["grid.nx"], self["grid.ny"], self["grid.lx"],
                             self["grid.ly"], dirichlet_sides=sides)

    def build_model(self, grid=None) -> ModelSpec:
        grid = grid if grid is not None else self.build_grid()
        if self.is_ks:
            fam = KsGaussianActuator(omega=self["actuator.omega"],
                                     bounds=(self["actuator.kad_low"],
                                             self["actuator.kad_high"]))
            return make_ks_model(grid, lam=self["model.lambda"], actuator=fam,
                                 linear=self["model.linear"])
        fam = HeatShapeActuator(basis_per_axis=self["actuator.basis_per_axis"],
                                lx=self["grid.lx"], ly=self["grid.ly"])
        nl = None if (self["model.linear"] or self["model.nonlinearity"] == "none") \
            else CUBIC_SINK
        return make_heat_model(grid, f_scalar=nl, actuator=fam)

    def build_design(self, model: ModelSpec) -> ActuatorDesign:
        r_init = self["actuator.r_init"]
        if r_init:
            return ActuatorDesign(params=np.asarray(r_init, dtype=float))
        return model.actuator_family.initial_design()

    def build_x0(self, grid) -> np.ndarray:
        kind = self["initial_condition.kind"]
        amp = self["initial_condition.amplitude"]
        if kind == "zero":
            return np.zeros(grid.size)
        if self.is_ks:
            xi = grid.nodes
            if kind == "sine":
                return amp * (np.sin(np.pi * xi)
                              + self["initial_condition.second_mode"] * np.sin(2 * np.pi * xi))
            c, wdt = self["initial_condition.center"], self["initial_condition.width"]
            return amp * np.exp(-((xi - c) ** 2) / (2 * wdt**2))
        xx, yy = grid.meshgrid()
        sx, sy = np.pi / grid.lx, np.pi / grid.ly
        if kind == "sine":
            base = np.sin(sx * xx) * np.sin(sy * yy) \
                + self["initial_condition.second_mode"] * np.sin(2 * sx * xx) * np.sin(sy * yy)
            return amp * base.ravel()
        c, wdt = self["initial_condition.center"], self["initial_condition.width"]
        bump = np.exp(-(((xx - c * grid.lx) ** 2 + (yy - c * grid.ly) ** 2)
                        / (2 * wdt**2)))
        return amp * bump.ravel()

    def build_time_grid(self) -> TimeGrid:
        return TimeGrid(tau=self["time.tau"], nt=self["time.nt"])

    def build_weights(self) -> CostWeights:
        return CostWeights(q_scale=self["cost.q_scale"], r_scale=self["cost.r_scale"])

    def build_sets(self, model: ModelSpec) -> AdmissibleSets:
        return AdmissibleSets(family=model.actuator_family, r1=self["sets.r1"],
                              r2=self["sets.r2"], u_box=self["sets.u_box"])

    def build_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(max_iters=self["optimizer.max_iters"],
                               tol=self["optimizer.tol"],
                               armijo_c1=self["optimizer.armijo_c1"],
                               backtrack=self["optimizer.backtrack"],
                               step0=self["optimizer.step0"],
                               seed=self["optimizer.seed"],
                               multi_start=self["optimizer.multi_start"],
                               mode=self["optimizer.mode"])
