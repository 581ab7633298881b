"""Textual row encoding: table rows to "Name: value, ..." sentences and back.

The decoder is schema-anchored: only a declared column name followed by
": " can terminate a value, so values containing ", " survive unless a
declared column name happens to follow. Sentences that cannot be
decoded are rejected with a reason code, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CodecError, DataError, TabsynthError
from .table import ColumnSpec, Table

REASON_MISSING = "missing_column"
REASON_DUPLICATE = "duplicate_column"
REASON_MALFORMED = "malformed"
REASON_INVALID_CELL = "invalid_cell"


class SentenceRejection(TabsynthError):
    """A generated sentence that does not decode to a full row."""

    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


def _check_schema_encodable(schema: Sequence[ColumnSpec]) -> None:
    for spec in schema:
        if ": " in spec.name or ", " in spec.name or "\n" in spec.name:
            raise CodecError(
                f"column name {spec.name!r} contains a clause separator; "
                "it cannot be textual-encoded unambiguously"
            )


def encode_row(
    row: Sequence[str],
    schema: Sequence[ColumnSpec],
    *,
    permute_seed: int | None = None,
    row_index: int = 0,
) -> str:
    """Serialize one row as comma-joined "Name: value" clauses.

    Natural column order by default; with permute_seed set, the clause
    order is a permutation that is deterministic per (seed, row_index).
    """
    _check_schema_encodable(schema)
    if len(row) != len(schema):
        raise CodecError(f"row has {len(row)} cells for {len(schema)} columns")
    for spec, cell in zip(schema, row):
        if "\n" in cell:
            raise CodecError(
                f"column {spec.name!r}: cell contains a newline; sentences are single-line"
            )
    order = list(range(len(schema)))
    if permute_seed is not None:
        rng = np.random.default_rng(np.random.SeedSequence(permute_seed, spawn_key=(row_index,)))
        order = [int(i) for i in rng.permutation(len(schema))]
    return ", ".join(f"{schema[i].name}: {row[i]}" for i in order)


def decode_sentence(sentence: str, schema: Sequence[ColumnSpec]) -> tuple[str, ...]:
    """Parse a sentence back into a full row (cells in schema order).

    Clause boundaries are occurrences of ", " followed by a declared
    column name and ": "; the longest declared column name wins. Raises
    SentenceRejection with a reason code on any malformed input.
    """
    _check_schema_encodable(schema)
    names_desc = sorted((spec.name for spec in schema), key=len, reverse=True)

    def clause_name_at(pos: int) -> str | None:
        for name in names_desc:
            if sentence.startswith(name + ": ", pos):
                return name
        return None

    first = clause_name_at(0)
    if first is None:
        raise SentenceRejection(
            REASON_MALFORMED, f"sentence does not start with a declared column: {sentence[:60]!r}"
        )

    found: dict[str, str] = {}
    name = first
    value_start = len(name) + 2
    pos = value_start
    while True:
        boundary = sentence.find(", ", pos)
        next_name = None
        while boundary != -1:
            next_name = clause_name_at(boundary + 2)
            if next_name is not None:
                break
            boundary = sentence.find(", ", boundary + 1)
        if boundary == -1 or next_name is None:
            value = sentence[value_start:]
            if name in found:
                raise SentenceRejection(REASON_DUPLICATE, f"column {name!r} appears twice")
            found[name] = value
            break
        value = sentence[value_start:boundary]
        if name in found:
            raise SentenceRejection(REASON_DUPLICATE, f"column {name!r} appears twice")
        found[name] = value
        name = next_name
        value_start = boundary + 2 + len(name) + 2
        pos = value_start

    missing = [spec.name for spec in schema if spec.name not in found]
    if missing:
        raise SentenceRejection(REASON_MISSING, f"columns absent: {missing}")
    return tuple(found[spec.name] for spec in schema)


@dataclass(frozen=True)
class EncodedCorpus:
    """A table rendered as sentences, one per row."""

    sentences: tuple[str, ...]
    column_names: tuple[str, ...]
    order_policy: str  # "natural" | "permuted(seed=N)"


def encode_table(table: Table, *, permute_seed: int | None = None) -> EncodedCorpus:
    policy = "natural" if permute_seed is None else f"permuted(seed={permute_seed})"
    sentences = tuple(
        encode_row(row, table.schema, permute_seed=permute_seed, row_index=i)
        for i, row in enumerate(table.rows)
    )
    return EncodedCorpus(sentences, table.column_names, policy)


def decode_corpus(
    sentences: Iterable[str], schema: Sequence[ColumnSpec]
) -> tuple[Table, dict[str, int]]:
    """Decode sentences row-wise; rejected sentences are counted by reason.

    A sentence whose cells violate the schema (a non-numeric value in a
    numerical column, a missing subject ID) is also rejected, so one bad
    generation can never fail the whole corpus.
    """
    rows = []
    rejections: dict[str, int] = {}
    for sentence in sentences:
        try:
            cells = decode_sentence(sentence, schema)
            Table(schema, [cells])  # per-row cell validation
            rows.append(cells)
        except SentenceRejection as rej:
            rejections[rej.reason] = rejections.get(rej.reason, 0) + 1
        except DataError:
            rejections[REASON_INVALID_CELL] = rejections.get(REASON_INVALID_CELL, 0) + 1
    return Table(schema, rows), rejections


def write_corpus(corpus: EncodedCorpus, path: str | Path) -> None:
    """One sentence per line, UTF-8."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for sentence in corpus.sentences:
            fh.write(sentence + "\n")


def read_corpus_lines(path: str | Path) -> list[str]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]
