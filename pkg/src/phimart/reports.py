"""Deterministic report serialization.

Identical configs must produce byte-identical artifacts, so reports use
sorted-key JSON with shortest-roundtrip float repr, carry no timestamps or
absolute paths, and stamp {tool_version, config_hash, seed} at the top level.
The config hash covers only the mathematical content of a run (instance,
task, seed), never output locations.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_canonical(obj), sort_keys=True, indent=2) + "\n"


def config_hash(config: dict) -> str:
    payload = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def write_report(path, payload: dict, config: dict, seed: int, tool_version: str) -> dict:
    """Stamp and write one JSON report; returns the stamped payload."""
    stamped = dict(payload)
    stamped["tool_version"] = tool_version
    stamped["config_hash"] = config_hash(config)
    stamped["seed"] = seed
    text = canonical_json(stamped)
    if path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    return stamped


def write_worst_splits_csv(path, table: list[dict], m: int) -> None:
    """Worst splits of a verification run, one row per split."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = (
            ["gap", "rel_gap"]
            + [f"y{c + 1}" for c in range(len(table[0]["y"]) if table else 1)]
            + [f"x{j + 1}" for j in range(m)]
            + [f"z{j + 1}" for j in range(m)]
        )
        w.writerow(header)
        for row in table:
            w.writerow(
                [repr(float(row["gap"])), repr(float(row["rel_gap"]))]
                + [repr(float(v)) for v in row["y"]]
                + [repr(float(v)) for v in row["xs"]]
                + [repr(float(v)) for v in row["zs"]]
            )
