"""Run configuration: strict JSON schema, defaults, and object construction.

A configuration names every ingredient from a catalog, so a run is fully
described by a small JSON document.  :func:`resolve` fills in defaults;
the resolved document is what manifests echo and what reruns consume.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

import jsonschema

from .continuation import INF
from .convex import make_convex
from .model import Problem, make_driver, make_forward, make_terminal
from .paths import TimeGrid
from .regression import BasisSpec
from .solver import SchemeConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


_CATALOG_ENTRY = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {"kind": {"type": "string"}, "params": {"type": "object"}},
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "grid", "mc"],
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["convex", "driver", "terminal"],
            "properties": {
                "name": {"type": "string"},
                "R0": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "convex": _CATALOG_ENTRY,
                "driver": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"type": "string"},
                        "params": {"type": "object"},
                        "a4": {"type": "object", "additionalProperties": False,
                               "properties": {k: {"type": "number"} for k in ("beta", "b", "kappa", "p")}},
                        "a5": {"type": "object", "additionalProperties": False, "required": ["M", "L"],
                               "properties": {"M": {"type": "number"}, "L": {"type": "number"}}},
                    },
                },
                "terminal": _CATALOG_ENTRY,
                "forward": _CATALOG_ENTRY,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N"],
            "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                           "N": {"type": "integer", "minimum": 1}},
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "required": ["M"],
            "properties": {"M": {"type": "integer", "minimum": 2},
                           "k": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                           "antithetic": {"type": "boolean"}},
        },
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["limit", "penalized", "exact"]},
                "epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "schedule": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"eps0": {"type": "number", "exclusiveMinimum": 0},
                                   "levels": {"type": "integer", "minimum": 2},
                                   "eps_values": {"type": ["array", "null"],
                                                  "items": {"type": "number", "exclusiveMinimum": 0}}},
                },
                "basis": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"kind": {"enum": ["hermite", "hat"]},
                                   "degree": {"type": "integer", "minimum": 0, "maximum": 12},
                                   "knots": {"type": "integer", "minimum": 2}},
                },
                "picard_iters": {"type": "integer", "minimum": 0, "maximum": 10},
                "a": {"type": "number", "exclusiveMinimum": 0},
                "p": {"type": "number", "exclusiveMinimum": 1},
                "truncate_radius": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "z_estimator": {"enum": ["centered", "plain"]},
            },
        },
        "study": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "truncation_n": {"type": "array", "items": {"type": ["number", "string"]}},
                "refinement_factors": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "deltas": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "perturbation": {"enum": ["shift", "shrink", None]},
                "c_ap": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "catalog": {"type": "boolean"},
                "refine": {"type": "boolean"},
                "yosida_eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                               "minItems": 2, "maxItems": 2},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"N_tree": {"type": "integer", "minimum": 1},
                           "mode": {"enum": ["limit", "penalized"]}},
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "problem": {"name": "problem", "R0": None, "forward": {"kind": "identity", "params": {}}},
    "grid": {"T": 1.0},
    "mc": {"k": 1, "seed": 0, "antithetic": False},
    "scheme": {"mode": "limit", "epsilon": None,
               "schedule": {"eps0": 0.1, "levels": 4, "eps_values": None},
               "basis": {"kind": "hermite", "degree": 3, "knots": 24},
               "picard_iters": 0, "a": 2.0, "p": 2.0, "truncate_radius": None,
               "z_estimator": "centered"},
    "study": {"truncation_n": [2, 4, 8, 16, "inf"], "refinement_factors": [4, 2, 1],
              "deltas": [0.01, 0.02, 0.04, 0.08], "perturbation": None, "c_ap": None},
    "checks": {"samples": 10000, "catalog": False, "refine": True, "yosida_eps": [0.1, 0.05]},
    "oracle": {"N_tree": 2000, "mode": "limit"},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _error_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{_error_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration: " + "; ".join(msgs))


def resolve(doc: dict) -> dict:
    """Validate and fill defaults.  Manifests are accepted and unwrapped."""
    if "manifest_version" in doc:
        doc = doc.get("config", {})
    validate(doc)
    out = _merge(DEFAULTS, doc)
    for key in ("params",):
        for block in ("convex", "driver", "terminal", "forward"):
            out["problem"][block].setdefault(key, {})
    if out["problem"]["driver"]["kind"] == "singular_push":
        out["problem"]["driver"]["params"].setdefault("T", out["grid"]["T"])
    if out["problem"]["terminal"]["kind"] == "constant":
        out["problem"]["terminal"]["params"].setdefault("dim", _convex_dim(out))
    fwd = out["problem"]["forward"]
    fwd["params"].setdefault("dim", out["mc"]["k"])
    return out


def _convex_dim(cfg):
    params = cfg["problem"]["convex"].get("params", {})
    if "dim" in params:
        return int(params["dim"])
    if "A" in params:
        return len(params["A"][0])
    return 1


def load(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    return resolve(doc)


def _floats(v):
    """JSON has no infinity literal; accept the strings "inf" and "-inf"."""
    if isinstance(v, str) and v.lower() in ("inf", "+inf", "infinity", "-inf", "-infinity"):
        return float(v)
    if isinstance(v, list):
        return [_floats(x) for x in v]
    if isinstance(v, dict):
        return {k: _floats(x) for k, x in v.items()}
    return v


def _build(factory, entry, what):
    try:
        return factory(entry["kind"], **_floats(entry.get("params", {})))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem.{what}: {exc}") from exc


def build_problem(cfg: dict) -> Problem:
    pb = cfg["problem"]
    phi = _build(make_convex, pb["convex"], "convex")
    drv_entry = pb["driver"]
    try:
        params = dict(_floats(drv_entry.get("params", {})))
        if "a4" in drv_entry:
            params["a4"] = drv_entry["a4"]
        if "a5" in drv_entry:
            params["a5"] = drv_entry["a5"]
        driver = make_driver(drv_entry["kind"], **params)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"problem.driver: {exc}") from exc
    terminal = _build(make_terminal, pb["terminal"], "terminal")
    forward = _build(make_forward, pb["forward"], "forward")
    if forward.dim != cfg["mc"]["k"] and forward.identity:
        raise ConfigError("problem.forward: identity forward needs dim == mc.k")
    return Problem(phi, driver, terminal, forward, float(cfg["grid"]["T"]), pb["R0"], pb["name"])


def build_grid(cfg: dict) -> TimeGrid:
    return TimeGrid(float(cfg["grid"]["T"]), int(cfg["grid"]["N"]))


def build_scheme(cfg: dict, threads: int = 1) -> SchemeConfig:
    s = cfg["scheme"]
    b = s["basis"]
    try:
        return SchemeConfig(epsilon=s["epsilon"], basis=BasisSpec(b["kind"], b["degree"], b["knots"]),
                            picard_iters=s["picard_iters"], a=s["a"], p=s["p"],
                            exact_gradient=s["mode"] == "exact", truncate_radius=s["truncate_radius"],
                            z_estimator=s["z_estimator"], threads=threads)
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from exc


def truncation_levels(cfg: dict) -> list[float]:
    out = []
    for v in cfg["study"]["truncation_n"]:
        v = _floats(v)
        if isinstance(v, str):
            raise ConfigError(f"study.truncation_n: cannot read {v!r}")
        out.append(INF if v == float("inf") else float(v))
    return out
