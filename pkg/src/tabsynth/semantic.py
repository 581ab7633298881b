"""Label semantic enhancement: bijective category remapping and its inverse.

Two ways to build a mapping system over selected categorical columns:

* differentiability mapping — automated assignment of globally unique
  names from a pool, so no label value co-occurs across columns;
* understandability mapping — a hand-authored document mapping each
  label to a semantically meaningful token, validated for the same
  global-uniqueness guarantee.

Plus literal-substring rewrite rules for dataset-specific token fixes,
and a storage handle whose destroy() implements the delete-after-
synthesis requirement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .errors import DataError, MappingError, SchemaError
from .table import MISSING, Table


def _as_tables(tables: Table | Sequence[Table]) -> tuple[Table, ...]:
    if isinstance(tables, Table):
        return (tables,)
    return tuple(tables)


@dataclass(frozen=True)
class MappingSystem:
    """Per-column bijection from original labels to enhanced labels.

    Enhanced labels are globally unique across all selected columns, so
    the transformed data contains no repeating categories.
    """

    mode: str  # "differentiability" | "understandability"
    columns: tuple[str, ...]
    forward: dict[str, dict[str, str]]  # column -> original -> enhanced

    def __post_init__(self) -> None:
        if self.mode not in ("differentiability", "understandability"):
            raise MappingError(f"unknown mapping mode {self.mode!r}")
        if set(self.columns) != set(self.forward):
            raise MappingError("mapping columns do not match forward map keys")
        seen: dict[str, str] = {}
        for col in self.columns:
            cmap = self.forward[col]
            enhanced = list(cmap.values())
            if len(set(enhanced)) != len(enhanced):
                dupes = sorted({e for e in enhanced if enhanced.count(e) > 1})
                raise MappingError(
                    f"column {col!r}: enhanced labels not distinct: {dupes}"
                )
            for e in enhanced:
                if e in seen:
                    raise MappingError(
                        f"enhanced label {e!r} appears in both column {seen[e]!r} "
                        f"and column {col!r}; enhanced labels must be globally unique"
                    )
                seen[e] = col

    @property
    def total_categories(self) -> int:
        return sum(len(cmap) for cmap in self.forward.values())

    def inverse_for(self, column: str) -> dict[str, str]:
        return {e: o for o, e in self.forward[column].items()}


def _observed_labels(tables: Sequence[Table], column: str) -> list[str]:
    """Distinct non-missing labels of a column across tables, sorted."""
    labels: set[str] = set()
    found = False
    for t in tables:
        if column in t.column_names:
            found = True
            spec = t.spec_for(column)
            if spec.modality != "categorical":
                raise SchemaError(
                    f"column {column!r} has modality {spec.modality!r}; "
                    "only categorical columns can be mapped"
                )
            labels.update(v for v in t.column_values(column) if v != MISSING)
    if not found:
        raise SchemaError(f"selected column {column!r} not found in any table")
    return sorted(labels)


def _all_cell_values(tables: Sequence[Table]) -> set[str]:
    values: set[str] = set()
    for t in tables:
        for row in t.rows:
            values.update(row)
    return values


def build_differentiability_mapping(
    tables: Table | Sequence[Table],
    selected: Sequence[str],
    name_pool: Sequence[str],
    seed: int,
) -> MappingSystem:
    """Assign each (column, label) pair a distinct name from the pool.

    Deterministic given the seed: the pool is shuffled once, then names
    are consumed in canonical order (selected columns in order, labels
    sorted within each column).
    """
    tables = _as_tables(tables)
    if len(set(selected)) != len(selected):
        raise MappingError("selected columns contain duplicates")
    pool = list(name_pool)
    if len(set(pool)) != len(pool):
        raise MappingError("name pool entries must be distinct")

    labels_by_col = {col: _observed_labels(tables, col) for col in selected}
    n = sum(len(v) for v in labels_by_col.values())
    if len(pool) < n:
        raise MappingError(
            f"name pool too small: need {n} names for {len(selected)} columns, "
            f"pool has {len(pool)}"
        )
    existing = _all_cell_values(tables)
    clashes = sorted(existing & set(pool))
    if clashes:
        raise MappingError(
            f"name pool collides with existing table labels (first few: {clashes[:5]})"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    shuffled = [pool[i] for i in order]

    forward: dict[str, dict[str, str]] = {}
    cursor = 0
    for col in selected:
        cmap = {}
        for label in labels_by_col[col]:
            cmap[label] = shuffled[cursor]
            cursor += 1
        forward[col] = cmap
    return MappingSystem("differentiability", tuple(selected), forward)


def build_understandability_mapping(
    tables: Table | Sequence[Table],
    spec: Mapping[str, Mapping[str, str]],
) -> MappingSystem:
    """Validate a hand-authored per-column mapping against observed data.

    Requires full coverage: every category observed in the data must
    have an entry. Entries for unobserved categories are allowed.
    """
    tables = _as_tables(tables)
    known_columns = {name for t in tables for name in t.column_names}
    for col in spec:
        if col not in known_columns:
            raise MappingError(f"mapping document names unknown column {col!r}")
    columns = tuple(spec.keys())
    forward = {col: dict(cmap) for col, cmap in spec.items()}
    for col, cmap in forward.items():
        observed = _observed_labels(tables, col)
        uncovered = sorted(set(observed) - set(cmap))
        if uncovered:
            raise MappingError(
                f"column {col!r}: categories observed in data but absent from "
                f"the mapping document: {uncovered}"
            )
    return MappingSystem("understandability", columns, forward)


def apply_mapping(table: Table, mapping: MappingSystem) -> Table:
    """Substitute enhanced labels cell-wise on mapped columns.

    Columns of the mapping absent from this table are skipped; unmapped
    columns are untouched; row count and order are preserved. Missing
    cells pass through unchanged.
    """
    cols = [c for c in mapping.columns if c in table.column_names]
    if not cols:
        return table
    idx = {table.index_of(c): mapping.forward[c] for c in cols}
    rows = []
    for r, row in enumerate(table.rows):
        cells = list(row)
        for i, cmap in idx.items():
            cell = cells[i]
            if cell == MISSING:
                continue
            try:
                cells[i] = cmap[cell]
            except KeyError:
                raise MappingError(
                    f"row {r}, column {table.schema[i].name!r}: "
                    f"label {cell!r} has no mapping entry"
                ) from None
        rows.append(tuple(cells))
    return Table(table.schema, rows)


@dataclass(frozen=True)
class RowRejection:
    row_index: int
    column: str
    label: str


def invert_mapping(table: Table, mapping: MappingSystem) -> tuple[Table, list[RowRejection]]:
    """Map enhanced labels back to originals.

    Rows holding a mapped-column value outside the mapping's enhanced
    range are invalid synthetic output: they are dropped and reported
    rather than failing the run. invert(apply(t)) == t with an empty
    rejection list.
    """
    cols = [c for c in mapping.columns if c in table.column_names]
    if not cols:
        return table, []
    inverse = {table.index_of(c): mapping.inverse_for(c) for c in cols}
    rows = []
    rejections: list[RowRejection] = []
    for r, row in enumerate(table.rows):
        cells = list(row)
        bad = None
        for i, imap in inverse.items():
            cell = cells[i]
            if cell == MISSING:
                continue
            original = imap.get(cell)
            if original is None:
                bad = RowRejection(r, table.schema[i].name, cell)
                break
            cells[i] = original
        if bad is not None:
            rejections.append(bad)
        else:
            rows.append(tuple(cells))
    return Table(table.schema, rows), rejections


@dataclass(frozen=True)
class RewriteRule:
    """Literal substring rewrite scoped to some columns (None = all)."""

    pattern: str
    replacement: str
    columns: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.pattern:
            raise MappingError("rewrite pattern must be non-empty")
        if not self.replacement:
            raise MappingError("rewrite replacement must be non-empty")
        if self.pattern == self.replacement:
            raise MappingError("rewrite pattern and replacement must differ")


def _scoped_indices(table: Table, rule: RewriteRule) -> list[int]:
    if rule.columns is None:
        return list(range(len(table.schema)))
    return [table.index_of(c) for c in rule.columns if c in table.column_names]


def apply_rewrites(table: Table, rules: Sequence[RewriteRule]) -> Table:
    """Apply literal rewrites in order, validating reversibility first.

    A rule is rejected when its replacement string already occurs in a
    scoped cell: reverse application would then be ambiguous.
    """
    rows = [list(row) for row in table.rows]
    for rule in rules:
        idx = _scoped_indices(table, rule)
        for r, cells in enumerate(rows):
            for i in idx:
                if rule.replacement in cells[i]:
                    raise MappingError(
                        f"rewrite {rule.pattern!r} -> {rule.replacement!r} is ambiguous: "
                        f"replacement already present in row {r}, "
                        f"column {table.schema[i].name!r}"
                    )
        for cells in rows:
            for i in idx:
                cells[i] = cells[i].replace(rule.pattern, rule.replacement)
    return Table(table.schema, [tuple(c) for c in rows])


def reverse_rewrites(table: Table, rules: Sequence[RewriteRule]) -> Table:
    """Undo apply_rewrites; rules are reversed in opposite order."""
    rows = [list(row) for row in table.rows]
    for rule in reversed(rules):
        idx = _scoped_indices(table, rule)
        for cells in rows:
            for i in idx:
                cells[i] = cells[i].replace(rule.replacement, rule.pattern)
    return Table(table.schema, [tuple(c) for c in rows])


# ---------------------------------------------------------------------------
# Mapping document format and persistent storage


def format_mapping_document(mapping: MappingSystem, header: bool = True) -> str:
    lines: list[str] = []
    if header:
        lines.append("#! tabsynth-mapping v1")
        lines.append(f"#! mode: {mapping.mode}")
    for col in mapping.columns:
        lines.append(f"[column {col}]")
        for original, enhanced in mapping.forward[col].items():
            if " => " in original:
                raise MappingError(
                    f"original label {original!r} contains the document separator ' => '"
                )
            lines.append(f"{original} => {enhanced}")
    return "\n".join(lines) + "\n"


def parse_mapping_document(text: str) -> tuple[str, dict[str, dict[str, str]]]:
    """Parse the one-section-per-column mapping document.

    Returns (mode, {column: {original: enhanced}}). User-authored
    documents without a header default to understandability mode.
    """
    mode = "understandability"
    spec: dict[str, dict[str, str]] = {}
    current: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#!"):
            body = line[2:].strip()
            if body.startswith("mode:"):
                mode = body.split(":", 1)[1].strip()
            continue
        if line.startswith("#"):
            continue
        if line.startswith("[column ") and line.endswith("]"):
            current = line[len("[column ") : -1]
            if current in spec:
                raise MappingError(f"line {line_no}: duplicate section for column {current!r}")
            spec[current] = {}
            continue
        if " => " not in line:
            raise MappingError(
                f"line {line_no}: expected 'original => enhanced', got {line!r}"
            )
        if current is None:
            raise MappingError(f"line {line_no}: mapping entry outside a [column ...] section")
        original, enhanced = line.split(" => ", 1)
        if original in spec[current]:
            raise MappingError(
                f"line {line_no}: duplicate original label {original!r} in column {current!r}"
            )
        spec[current][original] = enhanced
    return mode, spec


def mapping_from_document(text: str) -> MappingSystem:
    mode, spec = parse_mapping_document(text)
    columns = tuple(spec.keys())
    return MappingSystem(mode, columns, {c: dict(m) for c, m in spec.items()})


class MappingStore:
    """File-backed persistence for a MappingSystem, with secure deletion.

    The mapping must be destroyed once synthesis is finished so the
    label correspondence cannot be recovered; destroy() is idempotent.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def save(self, mapping: MappingSystem) -> None:
        self.path.write_text(format_mapping_document(mapping, header=True), encoding="utf-8")

    def load(self) -> MappingSystem:
        if not self.path.exists():
            raise MappingError(f"mapping store not found: {self.path} (destroyed or never saved)")
        return mapping_from_document(self.path.read_text(encoding="utf-8"))

    def destroy(self) -> Literal["destroyed", "already-destroyed"]:
        if not self.path.exists():
            return "already-destroyed"
        self.path.unlink()
        return "destroyed"


def load_name_pool(path: str | Path | None = None) -> list[str]:
    """Load a name pool file (one name per line); None loads the bundled pool."""
    if path is None:
        text = resources.files("tabsynth.data").joinpath("name_pool.txt").read_text("utf-8")
    else:
        p = Path(path)
        if not p.exists():
            raise DataError(f"name pool file not found: {p}")
        text = p.read_text(encoding="utf-8")
    names = [line.strip() for line in text.splitlines() if line.strip()]
    if len(set(names)) != len(names):
        raise MappingError("name pool file contains duplicate entries")
    return names
