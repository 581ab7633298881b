"""Contextual-variable detection and parent-table extraction.

A payload column of a child table is contextual when, for at least a
fraction m of subjects, its value is constant across all of that
subject's rows. Contextual columns are pulled out into a parent table
holding one row per subject; the remainder stays in the child.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .errors import DataError, SchemaError
from .table import MISSING, ColumnSpec, Table, build_subject_index


@dataclass(frozen=True)
class ColumnConsistency:
    fraction: float
    is_contextual: bool


@dataclass(frozen=True)
class ContextualReport:
    """Per-column consistency fractions at a given threshold."""

    threshold: float
    columns: dict[str, ColumnConsistency]

    @property
    def contextual_columns(self) -> list[str]:
        return [name for name, c in self.columns.items() if c.is_contextual]

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "columns": {
                name: {"fraction": c.fraction, "is_contextual": c.is_contextual}
                for name, c in self.columns.items()
            },
        }


def detect_contextual(child: Table, m: float) -> ContextualReport:
    """Measure per-column consistency fractions and flag contextual columns.

    A subject counts as consistent for a column when all of its rows
    hold the same value there; single-row subjects are vacuously
    consistent. A column is contextual iff its fraction >= m.
    """
    if not 0 < m <= 1:
        raise SchemaError(f"threshold m must be in (0, 1], got {m}")
    if not child.rows:
        raise DataError("cannot detect contextual columns on an empty table")
    if child.subject_spec is None:
        raise SchemaError("child table has no subject_id column")
    if not child.payload_specs:
        raise SchemaError("child table has no payload columns")

    index = build_subject_index(child)
    n_subjects = len(index)
    columns: dict[str, ColumnConsistency] = {}
    for spec in child.payload_specs:
        col = child.index_of(spec.name)
        consistent = 0
        for row_ids in index.values():
            first = child.rows[row_ids[0]][col]
            if all(child.rows[i][col] == first for i in row_ids[1:]):
                consistent += 1
        fraction = consistent / n_subjects
        columns[spec.name] = ColumnConsistency(fraction, fraction >= m)
    return ContextualReport(threshold=m, columns=columns)


def _mode(values: list[str]) -> str:
    # Ties broken by lexicographically smallest label.
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def extract_parent(child: Table, contextual_cols: list[str]) -> tuple[Table, Table]:
    """Split a child table into (parent, residual_child).

    The parent holds one row per subject: the subject ID plus each
    contextual column's per-subject representative value (the mode of
    that subject's values, ties lexicographic). The residual child is
    the input minus the contextual columns.
    """
    subject_spec = child.subject_spec
    if subject_spec is None:
        raise SchemaError("child table has no subject_id column")
    payload_names = {spec.name for spec in child.payload_specs}
    for name in contextual_cols:
        if name not in payload_names:
            raise SchemaError(f"contextual column {name!r} is not a payload column of the child")

    index = build_subject_index(child)
    col_idx = {name: child.index_of(name) for name in contextual_cols}
    parent_schema = (subject_spec,) + tuple(child.spec_for(n) for n in contextual_cols)
    parent_rows = []
    for subject, row_ids in index.items():
        cells = [subject]
        for name in contextual_cols:
            i = col_idx[name]
            cells.append(_mode([child.rows[r][i] for r in row_ids]))
        parent_rows.append(tuple(cells))
    parent = Table(parent_schema, parent_rows)

    residual = child.drop_columns(contextual_cols) if contextual_cols else child
    return parent, residual


def merge_parents(a: Table, b: Table) -> Table:
    """Combine two extracted parents on their shared subject column.

    Subjects appearing on only one side are retained, with missing
    markers for the absent side's columns. Payload columns must be
    disjoint between the two parents.
    """
    sa, sb = a.subject_spec, b.subject_spec
    if sa is None or sb is None:
        raise SchemaError("merge_parents requires subject_id columns on both parents")
    if sa.name != sb.name:
        raise SchemaError(f"subject column name mismatch: {sa.name!r} vs {sb.name!r}")
    a_payload = [s.name for s in a.payload_specs]
    b_payload = [s.name for s in b.payload_specs]
    collisions = sorted(set(a_payload) & set(b_payload))
    if collisions:
        raise SchemaError(f"parent payload column collision: {collisions}")

    a_rows = {row[a.index_of(sa.name)]: row for row in a.rows}
    b_rows = {row[b.index_of(sb.name)]: row for row in b.rows}
    if len(a_rows) != len(a.rows) or len(b_rows) != len(b.rows):
        raise DataError("merge_parents requires one row per subject on both sides")

    schema = (sa,) + a.payload_specs + b.payload_specs
    a_idx = [a.index_of(n) for n in a_payload]
    b_idx = [b.index_of(n) for n in b_payload]
    subjects = list(a_rows)
    subjects += [s for s in b_rows if s not in a_rows]

    rows = []
    for s in subjects:
        left = (
            tuple(a_rows[s][i] for i in a_idx)
            if s in a_rows
            else (MISSING,) * len(a_idx)
        )
        right = (
            tuple(b_rows[s][i] for i in b_idx)
            if s in b_rows
            else (MISSING,) * len(b_idx)
        )
        rows.append((s,) + left + right)
    return Table(schema, rows)
