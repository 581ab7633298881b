"""Typed tabular data model, CSV I/O, subject-keyed grouping and joins.

Cells are stored as strings with a per-column modality tag; numerical
columns are validated but never converted, so downstream synthesis
round-trips preserve the exact original formatting. The missing-value
marker is the empty string. Tables are immutable after construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, SchemaError

MODALITIES = ("categorical", "numerical", "freeform")
ROLES = ("subject_id", "payload")

MISSING = ""


@dataclass(frozen=True)
class ColumnSpec:
    """Declaration of one column: its name, value modality, and role."""

    name: str
    modality: str = "categorical"
    role: str = "payload"

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaError("column name must be non-empty")
        if self.modality not in MODALITIES:
            raise SchemaError(
                f"column {self.name!r}: unknown modality {self.modality!r} "
                f"(expected one of {MODALITIES})"
            )
        if self.role not in ROLES:
            raise SchemaError(
                f"column {self.name!r}: unknown role {self.role!r} "
                f"(expected one of {ROLES})"
            )


def _is_finite_number(cell: str) -> bool:
    try:
        return math.isfinite(float(cell))
    except ValueError:
        return False


class Table:
    """Immutable rectangular grid of string cells with a typed schema.

    Invariants enforced at construction: every row has exactly one cell
    per schema column; numerical cells parse as finite decimal numbers
    or are the missing marker; subject-ID cells are never missing; at
    most one column carries the subject_id role.
    """

    __slots__ = ("schema", "rows", "_index_by_name")

    def __init__(self, schema: Sequence[ColumnSpec], rows: Iterable[Sequence[str]]):
        schema = tuple(schema)
        if not schema:
            raise SchemaError("schema must declare at least one column")
        names = [spec.name for spec in schema]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names in schema: {dupes}")
        subject_cols = [spec for spec in schema if spec.role == "subject_id"]
        if len(subject_cols) > 1:
            raise SchemaError(
                f"schema declares {len(subject_cols)} subject_id columns; at most one allowed"
            )

        index_by_name = {spec.name: i for i, spec in enumerate(schema)}
        frozen_rows = []
        for r, row in enumerate(rows):
            cells = tuple(row)
            if len(cells) != len(schema):
                raise DataError(
                    f"row {r}: expected {len(schema)} cells, got {len(cells)}"
                )
            for i, cell in enumerate(cells):
                spec = schema[i]
                if not isinstance(cell, str):
                    raise DataError(
                        f"row {r}, column {spec.name!r}: cell must be a string, "
                        f"got {type(cell).__name__}"
                    )
                if "\x00" in cell:
                    raise DataError(
                        f"row {r}, column {spec.name!r}: cell contains a NUL byte, "
                        "which the CSV dialect cannot represent"
                    )
                if spec.role == "subject_id" and cell == MISSING:
                    raise DataError(f"row {r}: missing subject ID in column {spec.name!r}")
                if (
                    spec.modality == "numerical"
                    and cell != MISSING
                    and not _is_finite_number(cell)
                ):
                    raise DataError(
                        f"row {r}, column {spec.name!r}: {cell!r} is not a finite number"
                    )
            frozen_rows.append(cells)

        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "rows", tuple(frozen_rows))
        object.__setattr__(self, "_index_by_name", index_by_name)

    def __setattr__(self, name, value):  # immutability guard
        raise AttributeError("Table is immutable")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Table):
            return NotImplemented
        return self.schema == other.schema and self.rows == other.rows

    def __hash__(self) -> int:
        return hash((self.schema, self.rows))

    def __len__(self) -> int:
        return len(self.rows)

    def __repr__(self) -> str:
        return f"Table({len(self.schema)} cols x {len(self.rows)} rows)"

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.schema)

    @property
    def subject_spec(self) -> ColumnSpec | None:
        for spec in self.schema:
            if spec.role == "subject_id":
                return spec
        return None

    @property
    def payload_specs(self) -> tuple[ColumnSpec, ...]:
        return tuple(spec for spec in self.schema if spec.role != "subject_id")

    def index_of(self, name: str) -> int:
        try:
            return self._index_by_name[name]
        except KeyError:
            raise SchemaError(f"no column named {name!r}") from None

    def spec_for(self, name: str) -> ColumnSpec:
        return self.schema[self.index_of(name)]

    def column_values(self, name: str) -> tuple[str, ...]:
        i = self.index_of(name)
        return tuple(row[i] for row in self.rows)

    def subject_values(self) -> tuple[str, ...]:
        spec = self.subject_spec
        if spec is None:
            raise SchemaError("table has no subject_id column")
        return self.column_values(spec.name)

    def select_columns(self, names: Sequence[str]) -> "Table":
        idx = [self.index_of(n) for n in names]
        schema = tuple(self.schema[i] for i in idx)
        rows = [tuple(row[i] for i in idx) for row in self.rows]
        return Table(schema, rows)

    def drop_columns(self, names: Sequence[str]) -> "Table":
        drop = set(names)
        for n in drop:
            self.index_of(n)  # raises SchemaError on unknown names
        keep = [spec.name for spec in self.schema if spec.name not in drop]
        if not keep:
            raise SchemaError("cannot drop every column")
        return self.select_columns(keep)


SubjectIndex = dict[str, list[int]]


def build_subject_index(table: Table) -> SubjectIndex:
    """Group row indices by subject value, in first-appearance order."""
    spec = table.subject_spec
    if spec is None:
        raise SchemaError("table has no subject_id column")
    col = table.index_of(spec.name)
    index: SubjectIndex = {}
    for i, row in enumerate(table.rows):
        index.setdefault(row[col], []).append(i)
    return index


def validate_one_row_per_subject(table: Table) -> None:
    """Reject tables that claim one row per subject but contain duplicates."""
    index = build_subject_index(table)
    dupes = sorted(s for s, idxs in index.items() if len(idxs) > 1)
    if dupes:
        raise DataError(
            f"expected one row per subject, but {len(dupes)} subjects repeat "
            f"(first few: {dupes[:5]})"
        )


def load_csv(path: str | Path, schema: Sequence[ColumnSpec], separator: str = ",") -> Table:
    """Load a CSV file against a declared schema.

    The header must contain exactly the schema's column names (any
    order); columns are reordered to schema order. Numerical cells are
    validated during Table construction.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=separator)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        expected = {spec.name for spec in schema}
        got = set(header)
        if expected != got or len(header) != len(got):
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            parts = []
            if missing:
                parts.append(f"missing columns {missing}")
            if extra:
                parts.append(f"unexpected columns {extra}")
            if len(header) != len(got):
                parts.append("duplicate header names")
            raise DataError(f"{path}: header mismatch: " + "; ".join(parts))
        order = [header.index(spec.name) for spec in schema]
        rows = []
        for line_no, raw in enumerate(reader, start=1):
            if len(raw) != len(header):
                raise DataError(
                    f"{path}: row {line_no}: expected {len(header)} fields, got {len(raw)}"
                )
            rows.append(tuple(raw[i] for i in order))
    try:
        return Table(schema, rows)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_csv(table: Table, path: str | Path, separator: str = ",") -> None:
    """Write a table as UTF-8 CSV with RFC-style quoting.

    Round-trip contract: load_csv(write_csv(t), t.schema) == t cell-for-cell.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        # RFC 4180 dialect: CRLF line endings, so QUOTE_MINIMAL quotes any
        # cell containing \r or \n and the round-trip stays exact.
        writer = csv.writer(fh, delimiter=separator)
        writer.writerow(table.column_names)
        writer.writerows(table.rows)


def flatten_join(a: Table, b: Table) -> Table:
    """Direct flattening: per-subject Cartesian product of two tables' rows.

    Output schema is the shared subject column followed by a's payload
    columns then b's payload columns; the output holds, for each
    subject, every pairing of that subject's rows in a with its rows in
    b, so the row count is sum over subjects of |rows_a| * |rows_b|.
    Engaged subjects (many rows on both sides) dominate the result.
    """
    sa, sb = a.subject_spec, b.subject_spec
    if sa is None or sb is None:
        raise SchemaError("flatten_join requires a subject_id column on both tables")
    if sa.name != sb.name:
        raise SchemaError(
            f"subject column name mismatch: {sa.name!r} vs {sb.name!r}"
        )
    a_payload = [spec.name for spec in a.payload_specs]
    b_payload = [spec.name for spec in b.payload_specs]
    collisions = sorted(set(a_payload) & set(b_payload))
    if collisions:
        raise SchemaError(f"payload column name collision: {collisions}")

    schema = (sa,) + a.payload_specs + b.payload_specs
    a_idx = [a.index_of(n) for n in a_payload]
    b_idx = [b.index_of(n) for n in b_payload]
    b_by_subject = build_subject_index(b)
    a_by_subject = build_subject_index(a)

    rows = []
    for subject, a_rows in a_by_subject.items():
        for ra in a_rows:
            left = tuple(a.rows[ra][i] for i in a_idx)
            for rb in b_by_subject.get(subject, ()):
                right = tuple(b.rows[rb][i] for i in b_idx)
                rows.append((subject,) + left + right)
    return Table(schema, rows)
