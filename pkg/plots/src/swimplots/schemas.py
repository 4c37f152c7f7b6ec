"""CSV schemas shared with the simulation CLI outputs.

Loaders are strict: a missing or renamed column aborts with a diff of
expected versus found columns, so figure regeneration never silently
reads the wrong file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass


class SchemaError(ValueError):
    pass


#: columns of every figure-ready CSV, by logical schema name
SCHEMAS = {
    "sherwood": ["pe", "wR", "J0", "Jbar", "Sh", "periodic_flag"],
    "transient": ["pe", "t", "J_over_J0"],
    "experience": [
        "t", "s", "a", "s_next", "r_disp", "r_acc", "r_diff",
        "X_before", "X_after",
    ],
    "heatmap": ["reward", "gamma", "alpha", "success_rate", "n_batches"],
    "boxplot": ["reward", "pe", "batch_index", "total_success"],
}


@dataclass
class Table:
    columns: list
    rows: list  # list of dicts, values kept as strings

    def floats(self, column: str):
        return [float(r[column]) for r in self.rows]

    def strings(self, column: str):
        return [r[column] for r in self.rows]


def load_table(path, schema: str) -> Table:
    expected = SCHEMAS[schema]
    with open(path, newline="") as f:
        raw = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    if not raw:
        raise SchemaError(f"{path}: empty CSV")
    header = raw[0]
    if header != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise SchemaError(
            f"{path}: columns do not match the {schema!r} schema; "
            f"missing {missing}, unexpected {extra}"
        )
    rows = [dict(zip(header, r)) for r in raw[1:]]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return Table(columns=header, rows=rows)
