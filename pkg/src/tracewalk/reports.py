"""Experiment report container and its JSON / CSV serialisation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def jsonable(obj):
    """Convert numpy values and non-finite floats into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class ExperimentReport:
    """Output of one Monte Carlo experiment.

    ``results`` holds point estimates (a value and its ``*_stderr`` sibling),
    ``table`` one row per abscissa (x, h, n, k, ...).
    """

    name: str
    results: dict
    samples: int
    seed: int
    config: dict = field(default_factory=dict)
    table: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __getitem__(self, key):
        return self.results[key]

    def to_dict(self, runtime_seconds: float | None = None) -> dict:
        return jsonable({
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "config": self.config,
            "seed": self.seed,
            "results": {**self.results, "samples": self.samples, "flags": self.flags,
                        "table": self.table},
            "runtime_seconds": runtime_seconds,
        })

    def write_json(self, path, runtime_seconds: float | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(runtime_seconds), indent=2) + "\n",
                              encoding="utf-8")

    def write_csv(self, path) -> None:
        write_csv(path, self.table)


def write_csv(path, rows: list[dict]) -> None:
    """RFC 4180 CSV with a mandatory header and a schema_version column."""
    columns = ["schema_version"]
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(jsonable({"schema_version": SCHEMA_VERSION, **row}))
