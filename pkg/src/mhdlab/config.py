"""JSON run configuration with a strict schema.

Unknown keys are rejected everywhere so that a misspelt parameter cannot
silently fall back to a default during an acceptance run.  All violations
are collected and reported together, each prefixed with its key path.

``epsilon`` (like ``eps_study.eps_fractions``) is given as a fraction of
the box length.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from jsonschema import Draft202012Validator

from .evolution import DEFAULT_EXISTENCE_CONSTANT, PicardConfig, SimConfig
from .initial import FORCING_KINDS, INITIAL_KINDS, ForcingSpec, InitialSpec
from .mollifier import KERNEL_SHAPES
from .spectral import Grid

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "n_per_axis": {"type": "integer", "minimum": 8, "multipleOf": 2},
        "box_length": _POS,
        "dealias_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "dt": _POS,
        "t_end": _POS,
        "epsilon": _POS,
        "gamma": {"type": "number", "minimum": 0, "maximum": 2},
        "initial": _obj(
            {
                "kind": {"enum": list(INITIAL_KINDS)},
                "amplitude": _NONNEG,
                "magnetic_ratio": _NONNEG,
                "path": {"type": "string"},
                "kmax": _POS_INT,
            }
        ),
        "forcing": _obj(
            {
                "kind": {"enum": list(FORCING_KINDS)},
                "amplitude": _NONNEG,
                "mode": {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3},
                "omega": {"type": "number"},
                "magnetic_ratio": {"type": "number"},
            }
        ),
        "mollifier_variant": {"enum": ["fixed", "time_scaled"]},
        "kernel_shape": {"enum": list(KERNEL_SHAPES)},
        "driver": {"enum": ["stepper", "picard"]},
        "picard": _obj(
            {
                "tol": _POS,
                "max_iters": _POS_INT,
                "start": {"enum": ["zero", "linear", "perturbed"]},
                "perturbation": _POS,
            }
        ),
        "picard_window": _POS,
        "existence_constant": _POS,
        "snapshot_every": _POS_INT,
        "ledger_every": _POS_INT,
        "ledger_gammas": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 2}},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
        "energy": _obj(
            {
                "tolerance": _POS,
                "cancellation_samples": _POS_INT,
                "cancellation_n_per_axis": {"type": "integer", "minimum": 8, "multipleOf": 2},
            }
        ),
        "verify_weighted": _obj(
            {
                "gamma": {"type": "number", "minimum": 0, "maximum": 2},
                "refine_n_per_axis": {"type": "integer", "minimum": 8, "multipleOf": 2},
                "refine_dt_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "gronwall_cases": _POS_INT,
            }
        ),
        "pressure": _obj({"samples": _POS_INT, "tolerance": _POS, "q_tolerance": _POS}),
        "picard_probe": _obj(
            {
                "n_per_axis": {"type": "integer", "minimum": 8, "multipleOf": 2},
                "window_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "nodes": _POS_INT,
                "tol": _POS,
                "max_iters": _POS_INT,
            }
        ),
        "scaling": _obj(
            {
                "lambda": {"type": "number", "exclusiveMinimum": 1},
                "linear_amplitude": _POS,
                "linear_tolerance": _POS,
                "nonlinear_tolerance": _POS,
            }
        ),
        "eps_study": _obj(
            {"eps_fractions": {"type": "array", "items": _POS, "minItems": 2}}
        ),
        "dss": _obj(
            {
                "lambda": {"type": "number", "exclusiveMinimum": 1},
                "amplitude": _POS,
                "half_width": _POS,
                "n": {"type": "integer", "minimum": 4, "multipleOf": 2},
                "gammas": {"type": "array", "items": {"type": "number"}},
                "shells": {"type": "array", "items": {"type": "integer"}, "minItems": 2},
                "ratio_tolerance": _POS,
                "forcing_time": _POS,
            }
        ),
        "operators": _obj(
            {
                "fields": _POS_INT,
                "n_per_axis": {"type": "integer", "minimum": 8, "multipleOf": 2},
                "kmax": _POS_INT,
                "p_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 1}},
                "delta_list": {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 3}},
                "epsilon_fraction": _POS,
            }
        ),
    },
    required=("n_per_axis", "dt", "t_end", "epsilon"),
)

BLOCK_DEFAULTS = {
    "energy": {"tolerance": 1e-6, "cancellation_samples": 50, "cancellation_n_per_axis": 16},
    "verify_weighted": {"gamma": 1.5, "refine_n_per_axis": 48, "refine_dt_factor": 0.5, "gronwall_cases": 20},
    "pressure": {"samples": 10, "tolerance": 1e-10, "q_tolerance": 1e-10},
    "picard_probe": {"n_per_axis": 16, "window_fraction": 0.5, "nodes": 16, "tol": 1e-10, "max_iters": 80},
    "scaling": {"lambda": 2.0, "linear_amplitude": 1e-6, "linear_tolerance": 1e-8, "nonlinear_tolerance": 1e-6},
    "eps_study": {"eps_fractions": [0.4, 0.2, 0.1, 0.05]},
    "dss": {
        "lambda": 2.0,
        "amplitude": 1.0,
        "half_width": 128.0,
        "n": 256,
        "gammas": [0.5, 1.5],
        "shells": [3, 4, 5, 6],
        "ratio_tolerance": 0.1,
        "forcing_time": 0.3,
    },
    "operators": {
        "fields": 100,
        "n_per_axis": 16,
        "kmax": 4,
        "p_list": [1.5, 2.0, 4.0],
        "delta_list": [0.0, 1.0, 2.5],
        "epsilon_fraction": 0.1,
    },
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class RunConfig:
    sim: SimConfig
    blocks: dict = field(default_factory=dict)
    output_dir: str | None = None
    raw: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.sim.seed


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(data: dict) -> list[str]:
    v = Draft202012Validator(SCHEMA)
    errors = []
    for err in sorted(v.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        errors.append(f"{_path(err)}: {err.message}")
    if not errors:
        if data["t_end"] < data["dt"]:
            errors.append("t_end: must be at least dt")
    return errors


def config_from_dict(data: dict, seed: int | None = None) -> RunConfig:
    errors = validate(data)
    if errors:
        raise ConfigError(errors)
    d = copy.deepcopy(data)
    grid = Grid(d["n_per_axis"], d.get("box_length", 2.0 * math.pi), d.get("dealias_fraction", 2.0 / 3.0))
    init = d.get("initial", {})
    forc = d.get("forcing", {})
    picard = d.get("picard", {})
    run_seed = d.get("seed", 0) if seed is None else seed
    try:
        sim = SimConfig(
            grid=grid,
            epsilon=d["epsilon"] * grid.box_length,
            dt=d["dt"],
            t_end=d["t_end"],
            gamma=d.get("gamma", 1.5),
            initial=InitialSpec(**init),
            forcing=ForcingSpec(**{k: (tuple(v) if k == "mode" else v) for k, v in forc.items()}),
            mollifier_variant=d.get("mollifier_variant", "fixed"),
            kernel_shape=d.get("kernel_shape", "gaussian_bump"),
            driver=d.get("driver", "stepper"),
            picard=PicardConfig(**picard),
            picard_window=d.get("picard_window"),
            existence_constant=d.get("existence_constant", DEFAULT_EXISTENCE_CONSTANT),
            snapshot_every=d.get("snapshot_every", 1),
            ledger_every=d.get("ledger_every", 1),
            ledger_gammas=tuple(d.get("ledger_gammas", ())),
            seed=run_seed,
        )
    except ValueError as exc:
        raise ConfigError([f"epsilon: {exc}"]) from exc
    blocks = {}
    for name, defaults in BLOCK_DEFAULTS.items():
        merged = dict(defaults)
        merged.update(d.get(name, {}))
        blocks[name] = merged
    d["seed"] = run_seed
    return RunConfig(sim, blocks, d.get("output_dir"), d)


def parse_config(path, seed: int | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<root>: not valid JSON ({exc})"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["<root>: configuration must be a JSON object"])
    return config_from_dict(data, seed)
