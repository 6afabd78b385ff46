"""JSON-schema validation for CLI configuration files."""

import jsonschema

from .errors import ConfigError

_LEVEL = {"type": "string", "enum": ["subject", "subgroup", "population"]}
_HIERARCHY = {
    "oneOf": [
        {"type": "string", "enum": ["I", "II", "III", "IV"]},
        {
            "type": "object",
            "properties": {"a": _LEVEL, "c": _LEVEL, "b0": _LEVEL, "b1": _LEVEL},
            "required": ["a", "c", "b0", "b1"],
            "additionalProperties": False,
        },
    ]
}

_SOLVER_PROPS = {
    "schema_version": {"type": "integer"},
    "states": {"type": "integer", "minimum": 2},
    "hierarchy": _HIERARCHY,
    "grouping": {"type": "string", "enum": ["sex", "sex_age"]},
    "rho": {"type": "number", "exclusiveMinimum": 0},
    "adapt_rho": {"type": "boolean"},
    "tol_primal": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "tol_dual": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "max_iter": {"type": "integer", "minimum": 1},
    "n_starts": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer", "minimum": 0},
    "workers": {"type": "integer", "minimum": 1},
    "inner_gtol": {"type": "number", "exclusiveMinimum": 0},
    "inner_maxiter": {"type": "integer", "minimum": 1},
}

FIT_SCHEMA = {
    "type": "object",
    "properties": _SOLVER_PROPS,
    "additionalProperties": False,
}

SELECT_SCHEMA = {
    "type": "object",
    "properties": {
        **_SOLVER_PROPS,
        "states_grid": {
            "type": "array",
            "items": {"type": "integer", "minimum": 2},
            "minItems": 1,
        },
        "hierarchies": {"type": "array", "items": _HIERARCHY, "minItems": 1},
    },
    "additionalProperties": False,
}

BOOTSTRAP_SCHEMA = {
    "type": "object",
    "properties": {
        **_SOLVER_PROPS,
        "replicates": {"type": "integer", "minimum": 2},
        "levels": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "minItems": 1,
        },
    },
    "additionalProperties": False,
}

SIMULATE_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"type": "integer"},
        "n_subjects": {"type": "integer", "minimum": 1},
        "length_range": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "weekend_placement": {"type": "string", "enum": ["prefix", "interleaved"]},
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

PREPROCESS_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"type": "integer"},
        "missing_run_length": {"type": "integer", "minimum": 1},
        "truncation_cap": {"type": "integer", "minimum": 1},
        "min_valid_minutes": {"type": "integer", "minimum": 1},
        "age_range": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 2,
            "maxItems": 2,
        },
        "study_start_weekday": {"type": "integer", "minimum": 0, "maximum": 6},
    },
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"type": "integer"},
        "seed": {"type": "integer", "minimum": 0},
        "quantile_probs_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "n_sim_passes": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


def validate_config(doc: dict, schema: dict) -> dict:
    """Validate a config document; failures carry the offending field path."""
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(path, e.message) from None
    return doc
