"""Experiment configuration: JSON file <-> validated dataclass."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from ..dynamics import IntegratorConfig
from ..noise import NoiseModel, make_noise_model
from ..spectral import Grid, SpectralField, mode_field, random_field

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULTS", "SCHEMA"]


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "grid": {"n_h": 16, "n_v": 16, "dealias_fraction": 1.0},
    "integrator": {"dt": 1e-3, "T": 0.5, "record_every": 10, "blowup": 1e8},
    "initial": {"kind": "random", "seed": 1, "amplitude": 1.0, "slope": 2.0, "k_max": 4.0},
    "noise": {"kind": "additive", "J": 8, "decay": 2.0, "amplitude": 1.0, "coupling": 0.0},
    "ladder": {
        "eps": [1e-1, 1e-2, 1e-3, 1e-4],
        "scale_exponent": 0.25,
        "delta": [0.0, 0.02, 0.05, 0.1, 0.2, 0.4],
    },
    "mc": {"samples": 64, "seed": 20240607},
    "rate": {
        "N": 10.0,
        "k_weight": 1.0,
        "objective": "path",
        "tolerance": 1e-6,
        "penalty0": 1.0,
        "max_iters": 20000,
    },
    "output": {"dir": "runs", "snapshots": False},
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_h": {"type": "integer", "minimum": 4, "multipleOf": 2},
                "n_v": {"type": "integer", "minimum": 4, "multipleOf": 2},
                "dealias_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _pos,
                "T": _pos,
                "record_every": {"type": "integer", "minimum": 1},
                "blowup": _pos,
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["random", "shear", "decaying-mode", "file"]},
                "seed": _int,
                "amplitude": _num,
                "slope": _num,
                "k_max": _pos,
                "path": {"type": "string"},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["additive", "multiplicative"]},
                "J": {"type": "integer", "minimum": 1},
                "decay": _num,
                "amplitude": {"type": "number", "minimum": 0},
                "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "coupling": {"type": "number", "minimum": 0, "maximum": 1},
                "tail_tol": _pos,
            },
        },
        "ladder": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"type": "array", "items": _pos, "minItems": 1},
                "scale_exponent": _num,
                "delta": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"samples": {"type": "integer"}, "seed": {"type": "integer", "minimum": 0}},
        },
        "rate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "number", "minimum": 0},
                "k_weight": {"type": "number", "minimum": 0},
                "objective": {"enum": ["path", "terminal"]},
                "tolerance": _pos,
                "penalty0": _pos,
                "max_iters": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "snapshots": {"type": "boolean"}},
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment configuration; ``data`` mirrors the JSON file."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        try:
            jsonschema.validate(self.data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        self.data = _merge(DEFAULTS, self.data)
        self._check()

    def _check(self):
        eps = self.eps_ladder
        if any(e >= 1 for e in eps):
            raise ConfigError("eps ladder values must lie in (0, 1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"eps ladder must be strictly decreasing, got {eps}")
        if self.samples < 2:
            raise ConfigError("mc.samples must be >= 2")
        a = self.scale_exponent
        if not 0 < a < 0.5:
            raise ConfigError(f"ladder.scale_exponent must lie in (0, 1/2), got {a}")
        try:
            self.grid()
            self.integrator()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- construction ---------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        return cls(copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)

    def replace(self, **sections) -> ExperimentConfig:
        return ExperimentConfig(_merge(self.data, sections))

    def digest(self) -> str:
        blob = json.dumps(self.data, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- accessors ------------------------------------------------------

    @property
    def eps_ladder(self) -> list[float]:
        return [float(e) for e in self.data["ladder"]["eps"]]

    @property
    def deltas(self) -> list[float]:
        return [float(d) for d in self.data["ladder"]["delta"]]

    @property
    def scale_exponent(self) -> float:
        return float(self.data["ladder"]["scale_exponent"])

    @property
    def samples(self) -> int:
        return int(self.data["mc"]["samples"])

    @property
    def seed(self) -> int:
        return int(self.data["mc"]["seed"])

    @property
    def output_dir(self) -> str:
        return self.data["output"]["dir"]

    def grid(self) -> Grid:
        return Grid(**self.data["grid"])

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(**self.data["integrator"])

    def noise(self, grid: Grid | None = None) -> NoiseModel:
        try:
            return make_noise_model(grid or self.grid(), self.data["noise"])
        except ValueError as exc:
            raise ConfigError(f"noise: {exc}") from None

    def initial(self, grid: Grid | None = None) -> SpectralField:
        grid = grid or self.grid()
        ic = self.data["initial"]
        kind = ic["kind"]
        amp = float(ic.get("amplitude", 1.0))
        if kind == "random":
            rng = np.random.default_rng(int(ic.get("seed", 0)))
            return random_field(grid, rng, float(ic.get("slope", 2.0)), ic.get("k_max"), amp)
        if kind == "shear":
            # (amp sin x2, 0)
            return mode_field(grid, (0, 1), -0.5j * amp, vector=(1.0, 0.0))
        if kind == "decaying-mode":
            # (0, amp sin x1)
            return mode_field(grid, (1, 0), -0.5j * amp, vector=(0.0, 1.0))
        if kind == "file":
            from ..spectral import load_fields

            g, c = load_fields(ic["path"], grid.dealias_fraction)
            if g.n_h != grid.n_h or g.n_v != grid.n_v:
                raise ConfigError("initial field file was written on a different grid")
            return SpectralField(grid, c[0], True)
        raise ConfigError(f"unknown initial kind {kind!r}")
