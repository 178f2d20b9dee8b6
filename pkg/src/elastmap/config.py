"""Experiment configuration: defaults, strict schema validation, ``--set`` overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

DEFAULTS = {
    "mesh": {"grid_n": 20},
    "field": {
        "source": "grf",
        "length_scale": 0.1,
        "seed": 0,
        "image_path": None,
        "value": 2.0,
        "inside": 3.0,
        "outside": 1.5,
        "radius": 0.25,
        "centre": [0.5, 0.5],
    },
    "material": {"kind": "neo_hookean_plane_strain", "nu": 0.3, "mu2": 0.2, "Jm": 10.0},
    "load": {"d": 0.2, "steps": 10},
    "pinn": {
        "variant": "B",
        "fcnn": "II",
        "iterations": 20000,
        "lr": 1e-3,
        "lr_decay": None,
        "seed": 0,
        "log_stride": 100,
        "precision": "float64",
        "weights": {"pde": 1.0, "const": "E2", "data": 100.0},
    },
    "noise": {"percent": 0.0, "seed": 0},
    "adjoint": {"E_init": 1.0, "max_iter": 100, "tol": 1e-3},
    "output": {"directory": "runs/default"},
}

PAPER_SCALE = {("mesh", "grid_n"): 50, ("pinn", "iterations"): 500000}

_num = {"type": "number"}
_int = {"type": "integer"}


def _section(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _section(
    {
        "mesh": _section({"grid_n": {"type": "integer", "minimum": 1}}),
        "field": _section(
            {
                "source": {"enum": ["grf", "image", "uniform", "inclusion"]},
                "length_scale": {"type": "number", "exclusiveMinimum": 0},
                "seed": _int,
                "image_path": {"type": ["string", "null"]},
                "value": {"type": "number", "exclusiveMinimum": 0},
                "inside": {"type": "number", "exclusiveMinimum": 0},
                "outside": {"type": "number", "exclusiveMinimum": 0},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "centre": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
            }
        ),
        "material": _section(
            {
                "kind": {"enum": ["neo_hookean_plane_strain", "neo_hookean_plane_stress", "mooney_rivlin", "gent"]},
                "nu": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
                "mu2": {"type": "number", "minimum": 0},
                "Jm": {"type": "number", "exclusiveMinimum": 0},
            }
        ),
        "load": _section({"d": {"type": "number", "minimum": 0}, "steps": {"type": "integer", "minimum": 1}}),
        "pinn": _section(
            {
                "variant": {"enum": ["A", "B", "C", "D"]},
                "fcnn": {"enum": ["I", "II", "III", "IV", "V"]},
                "iterations": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_decay": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "seed": _int,
                "log_stride": {"type": "integer", "minimum": 1},
                "precision": {"enum": ["float64", "float32"]},
                "weights": _section(
                    {
                        "pde": {"type": "number", "exclusiveMinimum": 0},
                        "const": {"oneOf": [{"const": "E2"}, {"type": "number", "exclusiveMinimum": 0}]},
                        "data": {"type": "number", "exclusiveMinimum": 0},
                    }
                ),
            }
        ),
        "noise": _section({"percent": {"type": "number", "minimum": 0}, "seed": _int}),
        "adjoint": _section(
            {
                "E_init": {"oneOf": [{"type": "number"}, {"type": "string", "pattern": "^random(:[0-9]+)?$"}]},
                "max_iter": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            }
        ),
        "output": _section({"directory": {"type": "string"}}),
    }
)


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (value parsed as JSON, else kept as a string)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config section in override {path!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key in override {path!r}")
    node[keys[-1]] = _parse_value(raw)


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    field = cfg.get("field", {})
    if field.get("source") == "image" and not field.get("image_path"):
        raise ConfigError("field.source=image requires field.image_path")
    return cfg


def load_config(path: str | Path | None = None, overrides=(), paper_scale: bool = False) -> dict:
    """Read (optional) JSON, validate the user document, fill defaults, apply overrides."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        validate(user)
    cfg = _merge(DEFAULTS, user)
    if paper_scale:
        for (sec, key), val in PAPER_SCALE.items():
            cfg[sec][key] = val
    for item in overrides:
        apply_override(cfg, item)
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
