"""Machine-readable run reports emitted by the command-line tools."""

from __future__ import annotations

import hashlib
import json

import numpy as np

SCHEMA_VERSION = 1

# jsonschema document used by the test suite to validate emitted reports.
REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "command", "parameters", "dataset",
                 "timings_ms", "scores", "clusters", "seeds"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"type": "string"},
        "parameters": {"type": "object"},
        "dataset": {
            "type": "object",
            "required": ["n", "d", "metric", "sha256"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 1},
                "metric": {"type": ["string", "null"]},
                "sha256": {"type": "string"},
            },
        },
        "timings_ms": {
            "type": "object",
            "additionalProperties": {"type": "number", "minimum": 0},
        },
        "scores": {"type": ["object", "null"]},
        "clusters": {"type": ["integer", "null"]},
        "seeds": {"type": "object"},
    },
}


def dataset_fingerprint(ds) -> dict:
    digest = hashlib.sha256(np.ascontiguousarray(ds.points).tobytes()).hexdigest()
    return {"n": ds.n, "d": ds.d, "metric": ds.metric, "sha256": digest}


def make_report(command: str, parameters: dict, dataset: dict, timings_ms: dict,
                scores: dict | None = None, clusters: int | None = None,
                seeds: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "parameters": parameters,
        "dataset": dataset,
        "timings_ms": {k: float(v) for k, v in timings_ms.items()},
        "scores": scores,
        "clusters": clusters,
        "seeds": seeds or {},
    }


def print_report(report: dict) -> None:
    print(json.dumps(report, indent=2, sort_keys=True))
