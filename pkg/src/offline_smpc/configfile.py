"""JSON problem configuration: schema, validation and conversion to model,
design spec and campaign settings."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .prediction import DesignSpec, nominal_lqr_gain
from .uncertainty import UncertaintyModel

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_x0 = {
    "type": "object",
    "properties": {
        "mode": {"enum": ["interior", "boundary", "mixed"]},
        "points": _matrix,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["system", "constraints", "design"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["n", "m", "type"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "type": {"enum": ["affine", "mixture"]},
                "A0": _matrix,
                "B0": _matrix,
                "A_coeffs": {"type": "array", "items": _matrix},
                "B_coeffs": {"type": "array", "items": _matrix},
                "distribution": {"enum": ["uniform", "truncated_gaussian"]},
                "support": {
                    "type": "object",
                    "required": ["lower", "upper"],
                    "additionalProperties": False,
                    "properties": {"lower": _vector, "upper": _vector},
                },
                "mean": _vector,
                "std": _vector,
                "atoms": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["A", "B"],
                        "additionalProperties": False,
                        "properties": {"A": _matrix, "B": _matrix, "weight": {"type": "number", "minimum": 0}},
                    },
                },
            },
            "allOf": [
                {"if": {"properties": {"type": {"const": "affine"}}},
                 "then": {"required": ["A0", "B0", "A_coeffs", "B_coeffs", "support"]}},
                {"if": {"properties": {"type": {"const": "mixture"}}}, "then": {"required": ["atoms"]}},
                {"if": {"properties": {"distribution": {"const": "truncated_gaussian"}}, "required": ["distribution"]},
                 "then": {"required": ["mean", "std"]}},
            ],
        },
        "constraints": {
            "type": "object",
            "required": ["eps_h"],
            "additionalProperties": False,
            "properties": {
                "H_x": _matrix,
                "eps_x": {"type": "array", "items": _prob},
                "H_u": _matrix,
                "eps_h": _prob,
                "input_directions": {"type": "array", "items": _prob},
            },
        },
        "design": {
            "type": "object",
            "required": ["T", "Q", "R", "delta"],
            "additionalProperties": False,
            "properties": {
                "T": {"type": "integer", "minimum": 1},
                "Q": _matrix,
                "R": _matrix,
                "K": _matrix,
                "delta": _prob,
                "seed": {"type": "integer", "minimum": 0},
                "mc_samples": {"type": "integer", "minimum": 1},
                "terminal_draws": {"type": "integer", "minimum": 1},
                "budget_formula": {"enum": ["subset_eq13", "subset_eq14", "min"]},
                "n_probe": {"type": "integer", "minimum": 1},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_rollouts": {"type": "integer", "minimum": 1},
                "steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "disturbances": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": ["stochastic", "vertex_random", "vertex_adversarial"]},
                },
                "x0": _x0,
                "threshold": {"type": "number", "exclusiveMinimum": 0},
                "baseline": {"type": "boolean"},
                "baseline_rollouts": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DESIGN_DEFAULTS = {"seed": 0, "mc_samples": 20000, "terminal_draws": 20000, "budget_formula": "subset_eq13",
                   "n_probe": 200}
SIMULATE_DEFAULTS = {"n_rollouts": 100, "steps": 50, "seed": 0, "disturbances": ["stochastic"],
                     "x0": {"mode": "mixed"}, "threshold": 1e-3, "baseline": False, "baseline_rollouts": 20}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class Problem:
    model: UncertaintyModel
    spec: DesignSpec
    design: dict
    simulate: dict
    raw: dict


def _where(path) -> str:
    return "/".join(str(p) for p in path) or "<root>"


def load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def validate(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_where(e.absolute_path)}: {e.message}" for e in errors]
        raise ConfigError("config does not match the schema:\n  " + "\n  ".join(lines))


def _mat(value, shape, field):
    a = np.asarray(value, dtype=float)
    if a.size == 0 and shape[0] == 0:
        return np.zeros(shape)
    if a.ndim != 2 or (shape[0] is not None and a.shape[0] != shape[0]) or a.shape[1] != shape[1]:
        raise ConfigError(f"{field}: expected shape {tuple('*' if s is None else s for s in shape)}, got {a.shape}")
    return a


def build_model(system: dict) -> UncertaintyModel:
    n, m = system["n"], system["m"]
    if system["type"] == "mixture":
        atoms = [(_mat(a["A"], (n, n), f"system/atoms/{i}/A"), _mat(a["B"], (n, m), f"system/atoms/{i}/B"))
                 for i, a in enumerate(system["atoms"])]
        weights = None
        if any("weight" in a for a in system["atoms"]):
            weights = [a.get("weight", 0.0) for a in system["atoms"]]
        try:
            return UncertaintyModel.mixture(atoms, weights)
        except ValueError as exc:
            raise ConfigError(f"system/atoms: {exc}") from None
    A0 = _mat(system["A0"], (n, n), "system/A0")
    B0 = _mat(system["B0"], (n, m), "system/B0")
    Ai = [_mat(a, (n, n), f"system/A_coeffs/{i}") for i, a in enumerate(system["A_coeffs"])]
    Bi = [_mat(b, (n, m), f"system/B_coeffs/{i}") for i, b in enumerate(system["B_coeffs"])]
    try:
        return UncertaintyModel.affine(A0, B0, np.array(Ai).reshape(-1, n, n), np.array(Bi).reshape(-1, n, m),
                                       system["support"]["lower"], system["support"]["upper"],
                                       system.get("distribution", "uniform"), system.get("mean"), system.get("std"))
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from None


def build_spec(cfg: dict, model: UncertaintyModel) -> DesignSpec:
    n, m = model.n, model.m
    con, des = cfg["constraints"], cfg["design"]
    H_x = _mat(con.get("H_x", []), (None, n), "constraints/H_x") if con.get("H_x") else np.zeros((0, n))
    eps_x = np.asarray(con.get("eps_x", []), dtype=float)
    if eps_x.size != H_x.shape[0]:
        raise ConfigError(f"constraints/eps_x: need one risk level per H_x row ({H_x.shape[0]}), got {eps_x.size}")
    H_u = _mat(con["H_u"], (None, m), "constraints/H_u") if con.get("H_u") else np.zeros((0, m))
    Q = _mat(des["Q"], (n, n), "design/Q")
    R = _mat(des["R"], (m, m), "design/R")
    K = _mat(des["K"], (m, n), "design/K") if "K" in des else nominal_lqr_gain(model, Q, R)
    try:
        return DesignSpec(Q=Q, R=R, K=K, T=des["T"], H_x=H_x, eps_x=eps_x, H_u=H_u, eps_h=con["eps_h"],
                          delta=des["delta"], input_directions=tuple(con.get("input_directions", ())),
                          budget_policy=des.get("budget_formula", "subset_eq13"))
    except ValueError as exc:
        raise ConfigError(f"design: {exc}") from None


def load_problem(path) -> Problem:
    cfg = load_json(path)
    validate(cfg)
    model = build_model(cfg["system"])
    spec = build_spec(cfg, model)
    design = {**DESIGN_DEFAULTS, **cfg["design"]}
    simulate = {**SIMULATE_DEFAULTS, **cfg.get("simulate", {})}
    return Problem(model, spec, design, simulate, cfg)
