"""JSON configuration: schema, defaults and validation."""
import copy
import json

import jsonschema

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_ladder = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
           "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "density": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"enum": ["isotropic", "dist2"]}, "lame_mu": _pos, "lame_lambda": _num},
        },
        "lattice": {
            "type": "object", "additionalProperties": False,
            "properties": {"basis": {"type": "array", "items": _vec2, "minItems": 2, "maxItems": 2},
                           "cutoff_K": {"anyOf": [_pos, {"type": "null"}]},
                           "queries": {"type": "array", "items": _vec2},
                           "samples": {"type": "integer", "minimum": 1}},
        },
        "domain": {
            "type": "object", "additionalProperties": False,
            "properties": {"box": _vec2, "R": _pos, "delta": {"type": "number", "exclusiveMinimum": 0,
                                                              "exclusiveMaximum": 1},
                           "delta_ladder": _ladder,
                           "cells_per_decade": {"type": "integer", "minimum": 4},
                           "n_theta": {"anyOf": [{"type": "integer", "minimum": 8}, {"type": "null"}]},
                           "core_segments": {"type": "integer", "minimum": 8},
                           "chi_grid": {"type": "integer", "minimum": 8}},
        },
        "measure": {
            "type": "object", "additionalProperties": False,
            "properties": {"mu": _vec2, "burgers": _vec2, "magnitudes": {"type": "array", "items": {"type": "number",
                                                                                                    "minimum": 0}},
                           "n_eps": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                           "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        },
        "regime": {
            "type": "object", "additionalProperties": False,
            "properties": {"eps_ladder": _ladder, "rule": {"enum": ["constant", "log_power", "table"]},
                           "power": _pos, "constant": _pos,
                           "table": {"anyOf": [{"type": "array", "items": {"type": "integer", "minimum": 1}},
                                               {"type": "null"}]},
                           "J": {"enum": ["J0", "zero"]},
                           "s": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                           "trials": {"type": "integer", "minimum": 1}},
        },
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {"tol_g": _pos, "tol_e": _pos, "max_iter": {"type": "integer", "minimum": 1}},
        },
    },
}

DEFAULTS = {
    "density": {"kind": "isotropic", "lame_mu": 1.0, "lame_lambda": 1.0},
    "lattice": {"basis": [[1.0, 0.0], [0.0, 1.0]], "cutoff_K": None, "queries": [[1.0, 0.0], [1.0, 1.0], [2.0, 1.0]],
                "samples": 1000},
    "domain": {"box": [0.0, 1.0], "R": 1.0, "delta": 1e-2, "delta_ladder": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
               "cells_per_decade": 12, "n_theta": None, "core_segments": 64, "chi_grid": 128},
    "measure": {"mu": [1.0, 0.0], "burgers": [1.0, 0.0], "magnitudes": [1e-3, 3e-3, 1e-2],
                "n_eps": [25, 100, 400], "eps": 1e-3},
    "regime": {"eps_ladder": [1e-2, 3e-3, 1e-3], "rule": "log_power", "power": 1.0, "constant": 1.0,
               "table": None, "J": "J0", "s": 0.75, "trials": 200},
    "tolerances": {"tol_g": 1e-7, "tol_e": 1e-12, "max_iter": 3000},
}


class ConfigError(ValueError):
    pass


def _where(err):
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def validate(cfg):
    """Raise ConfigError naming the offending field."""
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"field {_where(e)}: {e.message}" for e in errors))


def merge(cfg):
    out = copy.deepcopy(DEFAULTS)
    for sec, vals in (cfg or {}).items():
        out[sec].update(vals)
    return out


def loads(text):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("line 1: top level must be an object")
    validate(raw)
    return merge(raw)


def load(path=None):
    if path is None:
        return merge({})
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return loads(text)
