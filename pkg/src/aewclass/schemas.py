"""JSON schemas for configuration documents and reports.

The same documents are mirrored under ``docs/schemas/`` (a test keeps them
in sync).  Validation errors name the offending JSON path.
"""

from __future__ import annotations

import jsonschema

from .core import ConfigError

SCHEMA_VERSION = 1

_number = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}

RULE = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["constant", "constant_score", "threshold", "linear",
                          "linear_score", "tabulated", "tabulated_score"]},
        "label_name": {"type": "string"},
    },
}

DICTIONARY = {
    "$id": "dictionary.schema.json",
    "oneOf": [
        {"type": "array", "minItems": 1, "items": RULE},
        {
            "type": "object",
            "required": ["members"],
            "properties": {
                "schema_version": {"const": SCHEMA_VERSION},
                "clip": {"type": "boolean"},
                "members": {"type": "array", "minItems": 1, "items": RULE},
            },
        },
    ],
}

DISTRIBUTION = {
    "$id": "distribution.schema.json",
    "type": "object",
    "required": ["type"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "type": {"enum": ["finite", "lower_bound", "holder_sinusoid", "holder_bump"]},
    },
    "allOf": [
        {
            "if": {"properties": {"type": {"const": "finite"}}},
            "then": {
                "required": ["points", "mass", "eta"],
                "properties": {
                    "points": {"type": "array", "minItems": 1},
                    "mass": {"type": "array", "minItems": 1, "items": _number},
                    "eta": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}},
                },
            },
        },
        {
            "if": {"properties": {"type": {"const": "lower_bound"}}},
            "then": {
                "required": ["M", "kappa"],
                "properties": {
                    "M": {"type": "integer", "minimum": 2},
                    "kappa": {"type": "number", "minimum": 1},
                    "n": _pos_int,
                    "sigma": {"oneOf": [
                        {"enum": ["ones", "random"]},
                        {"type": "array", "items": {"enum": [-1, 1]}},
                    ]},
                },
            },
        },
        {
            "if": {"properties": {"type": {"enum": ["holder_sinusoid", "holder_bump"]}}},
            "then": {
                "properties": {
                    "type": True,
                    "schema_version": True,
                    "d": {"enum": [1, 2]},
                    "amplitude": _number,
                    "frequency": _number,
                    "center": {"type": "array", "items": _number},
                    "radius": _number,
                    "gamma": {"type": "number", "exclusiveMinimum": 0},
                    "resolution": _pos_int,
                    "beta": {"type": "number", "exclusiveMinimum": 0},
                    "kappa": {"type": "number", "minimum": 1},
                },
                "additionalProperties": False,
            },
        },
    ],
}

PROCEDURE = {
    "type": "object",
    "required": ["type"],
    "properties": {"type": {"enum": ["aew", "erm", "plugin", "adaptive"]}},
    "allOf": [
        {
            "if": {"properties": {"type": {"enum": ["aew", "erm"]}}},
            "then": {
                "required": ["dictionary"],
                "properties": {
                    "dictionary": {"oneOf": [{"const": "bayes_candidates"}, DICTIONARY]},
                    "clip": {"type": "boolean"},
                },
            },
        },
        {
            "if": {"properties": {"type": {"const": "plugin"}}},
            "then": {
                "required": ["beta"],
                "properties": {
                    "beta": {"type": "number", "exclusiveMinimum": 0},
                    "bandwidth": {"type": "number", "exclusiveMinimum": 0},
                    "kernel": {"enum": ["uniform", "epanechnikov"]},
                },
            },
        },
        {
            "if": {"properties": {"type": {"const": "adaptive"}}},
            "then": {
                "properties": {
                    "trainer": {"const": "plugin-grid"},
                    "kernel": {"enum": ["uniform", "epanechnikov"]},
                },
            },
        },
    ],
}

EXPERIMENT = {
    "$id": "experiment.schema.json",
    "type": "object",
    "required": ["distribution", "procedure", "n_grid", "replications", "seed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "distribution": DISTRIBUTION,
        "procedure": PROCEDURE,
        "n_grid": {"type": "array", "minItems": 1, "items": _pos_int},
        "replications": _pos_int,
        "seed": {"type": "integer", "minimum": 0},
        "kappa": {"type": "number", "minimum": 1},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "target_exponent": {"type": "number"},
        "slope_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "oracle_gap": {
            "type": "object",
            "properties": {
                "a": {"type": "number", "exclusiveMinimum": 0},
                "probes": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

SIMULATE = {
    "$id": "simulate.schema.json",
    "type": "object",
    "required": ["distribution", "n"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "distribution": DISTRIBUTION,
        "n": _pos_int,
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

ALL = {
    "dictionary": DICTIONARY,
    "distribution": DISTRIBUTION,
    "experiment": EXPERIMENT,
    "simulate": SIMULATE,
}


def validate(document, schema, root="$"):
    """Raise :class:`ConfigError` naming the JSON path of the first problem."""
    validator = jsonschema.Draft202012Validator(schema)
    err = jsonschema.exceptions.best_match(validator.iter_errors(document))
    if err is not None:
        path = root + err.json_path[1:]
        raise ConfigError(f"{path}: {err.message}")
