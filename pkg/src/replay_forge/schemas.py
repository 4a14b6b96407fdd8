"""JSON schemas for every document the package reads or writes.

``dump`` validates before serializing, so nothing malformed reaches disk.
Serialization is canonical (sorted keys, two-space indent, trailing newline)
so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import InvariantViolation

_num01 = {"type": "number", "minimum": 0, "maximum": 1}
_version = {"type": "string", "pattern": r"^1\.\d+$"}
_nullable_num01 = {"anyOf": [_num01, {"type": "null"}]}
_quad = {
    "type": "object",
    "required": ["conf", "size", "unc", "comp"],
    "properties": {
        "conf": {"type": "number"},
        "size": {"type": "number"},
        "unc": {"type": "number"},
        "comp": {"type": "number"},
    },
    "additionalProperties": False,
}
_sources = {
    "type": "object",
    "properties": {
        "prob": {"type": ["string", "null"]},
        "gt": {"type": ["string", "null"]},
        "modalities": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}
_scoring_config = {
    "type": "object",
    "properties": {
        "tau": _num01,
        "alpha": _num01,
        "gamma": _num01,
        "band_inward": {"type": "integer", "minimum": 0},
        "band_outward": {"type": "integer", "minimum": 0},
        "connectivity": {"enum": [6, 26]},
    },
    "additionalProperties": False,
}

SCORES = {
    "type": "object",
    "required": ["version", "episode", "config", "scores"],
    "properties": {
        "version": _version,
        "episode": {"type": "string"},
        "config": _scoring_config,
        "scores": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["sample_id", "raw", "norm", "r_rep", "r_diff", "excluded", "exclusion_reason"],
                "properties": {
                    "sample_id": {"type": "string"},
                    "raw": {"anyOf": [_quad, {"type": "null"}]},
                    "norm": {"anyOf": [_quad, {"type": "null"}]},
                    "r_rep": _nullable_num01,
                    "r_diff": _nullable_num01,
                    "excluded": {"type": "boolean"},
                    "exclusion_reason": {"type": ["string", "null"]},
                    "sources": _sources,
                },
            },
        },
    },
}

BUFFER_STATE = {
    "type": "object",
    "required": ["version", "beta", "partitions"],
    "properties": {
        "version": _version,
        "beta": {"type": "integer", "minimum": 1},
        "partitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["episode", "entries"],
                "properties": {
                    "episode": {"type": "integer", "minimum": 0},
                    "name": {"type": "string"},
                    "entries": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["sample_id", "category", "stored_score", "prob_path", "gt_path", "modalities"],
                            "properties": {
                                "sample_id": {"type": "string"},
                                "category": {"enum": ["representative", "difficult"]},
                                "stored_score": _num01,
                                "prob_path": {"type": ["string", "null"]},
                                "gt_path": {"type": ["string", "null"]},
                                "modalities": {"type": "object", "additionalProperties": {"type": "string"}},
                            },
                        },
                    },
                },
            },
        },
    },
}

LAYOUT = {
    "type": "object",
    "required": ["version", "modalities"],
    "properties": {
        "version": _version,
        "modalities": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "index"],
                "properties": {"name": {"type": "string", "minLength": 1}, "index": {"type": "integer", "minimum": 0}},
            },
        },
    },
}

RESULTS = {
    "type": "object",
    "required": ["tasks", "rows"],
    "properties": {
        "version": _version,
        "tasks": {"type": "array", "items": {"type": "string"}},
        "rows": {"type": "array", "items": {"type": "array", "items": {"anyOf": [_num01, {"type": "null"}]}}},
    },
}

METRICS = {
    "type": "object",
    "required": ["version", "avg", "ilm", "bwt", "per_task_final"],
    "properties": {
        "version": _version,
        "avg": _num01,
        "ilm": _num01,
        "bwt": {"type": ["number", "null"], "minimum": -1, "maximum": 1},
        "per_task_final": {"type": "array", "items": _num01},
    },
}

MANIFEST = {
    "type": "object",
    "required": ["version", "episode", "lesion_type", "modalities", "samples"],
    "properties": {
        "version": _version,
        "episode": {"type": "string"},
        "lesion_type": {"type": "string"},
        "modalities": {"type": "array", "items": {"type": "string"}},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["sample_id", "gt"],
                "properties": {
                    "sample_id": {"type": "string"},
                    "modalities": {"type": "object", "additionalProperties": {"type": "string"}},
                    "gt": {"type": "string"},
                    "prob": {"type": ["string", "null"]},
                },
            },
        },
    },
}

DCTG_DESCRIPTOR = {
    "type": "object",
    "required": ["version", "d", "h", "C", "epsilon", "tensors"],
    "properties": {
        "version": _version,
        "d": {"type": "integer", "minimum": 1},
        "h": {"type": "integer", "minimum": 1},
        "C": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "tensors": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}

_eval_task = {
    "type": "object",
    "required": ["pred_dir", "gt_dir"],
    "properties": {"pred_dir": {"type": "string"}, "gt_dir": {"type": "string"}},
}

STREAM_CONFIG = {
    "type": "object",
    "required": ["version", "episodes", "beta"],
    "properties": {
        "version": _version,
        "episodes": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "beta": {"type": "integer", "minimum": 1},
        "n": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "scoring": _scoring_config,
        "rmd_epochs": {"type": "integer", "minimum": 0},
        "rmd_law": {"enum": ["uniform-size", "bernoulli"]},
        "output_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "eval": {"type": "array", "items": {"anyOf": [{"type": "null"}, {"type": "array", "items": _eval_task}]}},
    },
}

STREAM_REPORT = {
    "type": "object",
    "required": ["version", "config_hash", "seed", "beta", "episodes", "inflation_events", "layout", "final_buffer_sizes"],
    "properties": {
        "version": _version,
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "seed": {"type": "integer"},
        "beta": {"type": "integer", "minimum": 1},
        "episodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "name", "prompt", "k_before", "k_after", "scored", "excluded",
                             "partition", "base_quotas", "quotas", "buffer_sizes", "evicted", "rmd_plan",
                             "invariants"],
                "properties": {
                    "index": {"type": "integer"},
                    "name": {"type": "string"},
                    "prompt": {"type": "string"},
                    "k_before": {"type": "integer", "minimum": 0},
                    "k_after": {"type": "integer", "minimum": 1},
                    "scored": {"type": "integer", "minimum": 0},
                    "excluded": {"type": "array"},
                    "partition": {"type": "object"},
                    "base_quotas": {"type": "array", "items": {"type": "integer"}},
                    "quotas": {"type": "array", "items": {"type": "integer"}},
                    "buffer_sizes": {"type": "array", "items": {"type": "integer"}},
                    "evicted": {"type": "array"},
                    "rmd_plan": {"type": "array"},
                    "invariants": {"type": "array", "items": {"type": "string"}},
                    "dsc_row": {"type": ["array", "null"], "items": _num01},
                },
            },
        },
        "inflation_events": {"type": "array"},
        "layout": LAYOUT,
        "final_buffer_sizes": {"type": "array", "items": {"type": "integer"}},
        "metrics": {"anyOf": [METRICS, {"type": "null"}]},
    },
}

DUMP = {
    "type": "object",
    "required": ["dtype", "dims", "axis", "slabs"],
    "properties": {
        "dtype": {"enum": ["float32", "uint8"]},
        "dims": {"type": "array", "items": {"type": "integer"}},
        "axis": {"type": "integer"},
        "slabs": {"type": "array"},
    },
}

EVAL_ROW = {
    "type": "object",
    "required": ["version", "row"],
    "properties": {"version": _version, "row": {"type": "array", "minItems": 1, "items": _num01}},
}

SCHEMAS = {
    "eval_row": EVAL_ROW,
    "scores": SCORES,
    "buffer_state": BUFFER_STATE,
    "layout": LAYOUT,
    "results": RESULTS,
    "metrics": METRICS,
    "manifest": MANIFEST,
    "dctg_descriptor": DCTG_DESCRIPTOR,
    "stream_config": STREAM_CONFIG,
    "stream_report": STREAM_REPORT,
    "dump": DUMP,
}


def validate(doc, name: str) -> None:
    jsonschema.validate(doc, SCHEMAS[name])


def canonical(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def config_hash(doc) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dump(doc, name: str, path: str | Path | None = None) -> str:
    """Validate ``doc`` against schema ``name`` and return (and optionally write) it."""
    try:
        validate(doc, name)
    except jsonschema.ValidationError as exc:
        raise InvariantViolation(f"emitted {name} document fails its schema: {exc.message}") from exc
    text = canonical(doc)
    if path is not None:
        Path(path).write_text(text)
    return text
