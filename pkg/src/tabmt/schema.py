"""Table schemas, CSV ingestion, splits, and missing-value handling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class _Missing:
    """Singleton marker for an absent cell value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"


MISSING = _Missing()

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FieldSchema:
    name: str
    kind: str
    declared_cardinality: int | None = None
    max_bins: int | None = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise SchemaError(f"unknown field kind {self.kind!r}")
        if self.kind == CATEGORICAL and self.max_bins is not None:
            raise SchemaError(f"{self.name}: categorical fields take no max_bins")
        if self.kind == CONTINUOUS and self.declared_cardinality is not None:
            raise SchemaError(f"{self.name}: continuous fields take no declared_cardinality")
        if self.kind == CONTINUOUS:
            if self.max_bins is None or self.max_bins < 1:
                raise SchemaError(f"{self.name}: continuous fields need max_bins >= 1")
        if self.declared_cardinality is not None and self.declared_cardinality < 1:
            raise SchemaError(f"{self.name}: declared_cardinality must be positive")


@dataclass(frozen=True)
class TableSchema:
    fields: tuple[FieldSchema, ...]
    target_index: int | None = None

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate field names in schema")
        if self.target_index is not None and not 0 <= self.target_index < len(self.fields):
            raise SchemaError("target_index out of range")

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def to_json(self) -> dict:
        out = {"fields": []}
        for f in self.fields:
            d = {"name": f.name, "kind": f.kind}
            if f.declared_cardinality is not None:
                d["declared_cardinality"] = f.declared_cardinality
            if f.max_bins is not None:
                d["max_bins"] = f.max_bins
            out["fields"].append(d)
        if self.target_index is not None:
            out["target"] = self.fields[self.target_index].name
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TableSchema":
        fields = tuple(
            FieldSchema(
                name=d["name"],
                kind=d["kind"],
                declared_cardinality=d.get("declared_cardinality"),
                max_bins=d.get("max_bins"),
            )
            for d in obj["fields"]
        )
        target_index = None
        if "target" in obj and obj["target"] is not None:
            names = [f.name for f in fields]
            if obj["target"] not in names:
                raise SchemaError(f"target {obj['target']!r} not among fields")
            target_index = names.index(obj["target"])
        return cls(fields=fields, target_index=target_index)


def load_schema(path: str) -> TableSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return TableSchema.from_json(json.load(fh))


def save_schema(schema: TableSchema, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)


@dataclass
class RawTable:
    """Parsed cell values in schema order; continuous cells are floats."""

    schema: TableSchema
    cells: list[list]

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    def column(self, j: int) -> list:
        return [row[j] for row in self.cells]


def _parse_cell(raw: str, fs: FieldSchema, missing_marker: str):
    if raw == missing_marker or raw == "":
        return MISSING
    if fs.kind == CONTINUOUS:
        try:
            return float(raw)
        except ValueError:
            raise SchemaError(f"non-numeric value {raw!r} in continuous column {fs.name!r}")
    return raw


def load_csv(path: str, schema: TableSchema, missing_marker: str = "") -> RawTable:
    """Read a headered CSV into schema column order.

    Cells equal to ``missing_marker`` (or empty) become MISSING.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        col_of = {name: i for i, name in enumerate(header)}
        for f in schema.fields:
            if f.name not in col_of:
                raise SchemaError(f"{path}: column {f.name!r} missing from header")
        order = [col_of[f.name] for f in schema.fields]
        cells = []
        for row in reader:
            if len(row) < len(header):
                raise SchemaError(f"{path}: short row {row!r}")
            cells.append(
                [_parse_cell(row[src], fs, missing_marker) for src, fs in zip(order, schema.fields)]
            )
    return RawTable(schema=schema, cells=cells)


def write_csv(table: RawTable, path: str, missing_marker: str = ""):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.schema.names)
        for row in table.cells:
            writer.writerow(
                [missing_marker if c is MISSING else c for c in row]
            )


def infer_schema(path: str, max_bins: int = 100, missing_marker: str = "",
                 target: str | None = None) -> TableSchema:
    """Guess field kinds from a CSV: numeric-parseable columns become
    continuous, everything else categorical."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        numeric = [True] * len(header)
        seen_value = [False] * len(header)
        for row in reader:
            for i, raw in enumerate(row[: len(header)]):
                if raw == missing_marker or raw == "":
                    continue
                seen_value[i] = True
                if numeric[i]:
                    try:
                        float(raw)
                    except ValueError:
                        numeric[i] = False
    fields = []
    for name, is_num, seen in zip(header, numeric, seen_value):
        if is_num and seen:
            fields.append(FieldSchema(name=name, kind=CONTINUOUS, max_bins=max_bins))
        else:
            fields.append(FieldSchema(name=name, kind=CATEGORICAL))
    target_index = header.index(target) if target is not None else None
    return TableSchema(fields=tuple(fields), target_index=target_index)


def split(table: RawTable, fractions: tuple[float, float, float], seed: int
          ) -> tuple[RawTable, RawTable, RawTable]:
    """Deterministic exact partition into train/val/test."""
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = table.n_rows
    n_nonzero = sum(1 for f in fractions if f > 0)
    if n < n_nonzero:
        raise ValueError(f"cannot split {n} rows into {n_nonzero} non-empty parts")
    # Largest-remainder apportionment keeps the partition exact.
    raw = [f * n for f in fractions]
    counts = [int(x) for x in raw]
    rem = n - sum(counts)
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:rem]:
        counts[i] += 1
    for i, f in enumerate(fractions):
        if f > 0 and counts[i] == 0:
            counts[i] += 1
            counts[int(np.argmax(counts))] -= 1
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)
    parts = []
    start = 0
    for c in counts:
        part_idx = sorted(idx[start:start + c])
        parts.append(RawTable(schema=table.schema, cells=[table.cells[i] for i in part_idx]))
        start += c
    return tuple(parts)


def drop_values(table: RawTable, fraction: float, seed: int) -> RawTable:
    """Independently blank each cell with the given probability."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n, l = table.n_rows, table.schema.n_fields
    drop = rng.random((n, l)) < fraction
    cells = [
        [MISSING if drop[i][j] else table.cells[i][j] for j in range(l)]
        for i in range(n)
    ]
    return RawTable(schema=table.schema, cells=cells)


@dataclass
class TokenTable:
    """Integer-encoded table with an explicit missing mask.

    Missing cells hold the per-field sentinel (the field's cardinality),
    which is never a valid class index.
    """

    schema: TableSchema
    tokens: np.ndarray
    missing: np.ndarray = field(default=None)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.missing is None:
            self.missing = np.zeros(self.tokens.shape, dtype=bool)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.tokens.shape != self.missing.shape:
            raise SchemaError("tokens/missing shape mismatch")

    @property
    def n_rows(self) -> int:
        return self.tokens.shape[0]
