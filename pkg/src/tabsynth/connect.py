"""Cross-table connecting method: association, independence, reduction.

Pipeline over a flattened two-table join:

1. quantify pairwise association of categorical columns with Cramér's V,
   V = sqrt(chi2 / (N * min(r - 1, c - 1))) over the r x c contingency
   table of observed labels;
2. determine independent columns, either by the up-and-stay threshold
   rule (a column is independent iff every one of its pairwise
   coefficients is strictly below the threshold) or by average-linkage
   hierarchical clustering of the association-matrix rows;
3. remove independent columns, deduplicate the now-repeating rows, and
   re-attach the removed columns by per-subject bootstrap sampling so
   no (subject, value) combination absent from the original data can
   ever be emitted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConnectError, SchemaError
from .table import ColumnSpec, Table, build_subject_index


def cramers_v(col_a: Sequence[str], col_b: Sequence[str]) -> float:
    """Cramér's V between two categorical columns, in [0, 1].

    Plain definition without bias correction. Degenerate inputs (either
    column constant, so min(r-1, c-1) = 0) are defined as 0.0: no
    variation means no measurable association.
    """
    if len(col_a) != len(col_b):
        raise ConnectError(
            f"column length mismatch: {len(col_a)} vs {len(col_b)}"
        )
    n = len(col_a)
    if n == 0:
        raise ConnectError("cannot compute association of empty columns")

    cats_a = {v: i for i, v in enumerate(dict.fromkeys(col_a))}
    cats_b = {v: i for i, v in enumerate(dict.fromkeys(col_b))}
    r, c = len(cats_a), len(cats_b)
    if min(r - 1, c - 1) == 0:
        return 0.0

    counts = np.zeros((r, c), dtype=np.int64)
    for va, vb in zip(col_a, col_b):
        counts[cats_a[va], cats_b[vb]] += 1

    row_tot = counts.sum(axis=1, keepdims=True)
    col_tot = counts.sum(axis=0, keepdims=True)
    expected = row_tot * col_tot / n
    # Observed categories guarantee strictly positive marginals, so no
    # zero expected cells can occur.
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    v = (chi2 / (n * min(r - 1, c - 1))) ** 0.5
    return min(v, 1.0)


@dataclass(frozen=True)
class AssociationMatrix:
    """Symmetric matrix of pairwise Cramér's V values, diagonal 1."""

    labels: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        k = len(self.labels)
        if any(len(row) != k for row in self.values) or len(self.values) != k:
            raise ConnectError("association matrix is not square")
        for i in range(k):
            if self.values[i][i] != 1.0:
                raise ConnectError("association matrix diagonal must be 1.0")
            for j in range(k):
                v = self.values[i][j]
                if not 0.0 <= v <= 1.0:
                    raise ConnectError(f"association value out of range: {v}")
                if v != self.values[j][i]:
                    raise ConnectError("association matrix must be symmetric")

    def value(self, a: str, b: str) -> float:
        i, j = self.labels.index(a), self.labels.index(b)
        return self.values[i][j]

    def off_diagonal(self) -> list[float]:
        k = len(self.labels)
        return [self.values[i][j] for i in range(k) for j in range(i + 1, k)]

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("",) + self.labels)
            for label, row in zip(self.labels, self.values):
                w.writerow((label,) + tuple(repr(v) for v in row))

    def write_long_csv(self, path: str | Path) -> None:
        """Heatmap-ready long format: col_a, col_b, v."""
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("col_a", "col_b", "v"))
            for i, a in enumerate(self.labels):
                for j, b in enumerate(self.labels):
                    w.writerow((a, b, repr(self.values[i][j])))


def association_matrix(table: Table, cols: Sequence[str]) -> AssociationMatrix:
    """Pairwise Cramér's V over the given categorical columns."""
    for name in cols:
        spec = table.spec_for(name)
        if spec.modality != "categorical":
            raise SchemaError(
                f"column {name!r} has modality {spec.modality!r}; association "
                "analysis runs on categorical columns only"
            )
    values = {name: table.column_values(name) for name in cols}
    k = len(cols)
    m = [[1.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            v = cramers_v(values[cols[i]], values[cols[j]])
            m[i][j] = v
            m[j][i] = v
    return AssociationMatrix(tuple(cols), tuple(tuple(row) for row in m))


def exclude_noisy_columns(table: Table, cols: Sequence[str]) -> Table:
    """Drop declared noisy columns (identifiers, timestamps) before analysis.

    The dropped columns are not discarded from the pipeline: they are
    re-attached to the final output through the independent-column
    bootstrap path.
    """
    if not cols:
        return table
    for name in cols:
        table.index_of(name)  # unknown column -> SchemaError
    subject = table.subject_spec
    remaining = [
        s.name
        for s in table.payload_specs
        if s.name not in set(cols)
    ]
    if not remaining:
        raise ConnectError("excluding all payload columns leaves nothing to connect")
    if subject is not None and subject.name in set(cols):
        raise ConnectError(f"cannot exclude the subject column {subject.name!r}")
    return table.drop_columns(list(cols))


@dataclass(frozen=True)
class IndependencePartition:
    """Split of analyzed columns into independent and core sets."""

    independent_cols: tuple[str, ...]
    core_cols: tuple[str, ...]
    method: str

    def __post_init__(self) -> None:
        overlap = set(self.independent_cols) & set(self.core_cols)
        if overlap:
            raise ConnectError(f"partition overlap: {sorted(overlap)}")

    @property
    def analyzed_cols(self) -> tuple[str, ...]:
        return self.independent_cols + self.core_cols

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "independent": list(self.independent_cols),
            "core": list(self.core_cols),
        }


def threshold_independent(
    matrix: AssociationMatrix, threshold: str | float
) -> IndependencePartition:
    """Up-and-stay threshold separation.

    A column is independent iff all of its off-diagonal association
    values are strictly below the threshold, which is either the mean
    or median of all off-diagonal entries or a fixed value.
    """
    off = matrix.off_diagonal()
    if threshold == "mean":
        if not off:
            raise ConnectError("mean threshold undefined for a 1x1 matrix")
        resolved = float(np.mean(off))
        method = f"threshold_mean({resolved:.6g})"
    elif threshold == "median":
        if not off:
            raise ConnectError("median threshold undefined for a 1x1 matrix")
        resolved = float(np.median(off))
        method = f"threshold_median({resolved:.6g})"
    elif isinstance(threshold, (int, float)) and not isinstance(threshold, bool):
        resolved = float(threshold)
        if not 0.0 <= resolved <= 1.0:
            raise ConnectError(f"fixed threshold must be in [0, 1], got {resolved}")
        method = f"threshold_fixed({resolved:.6g})"
    else:
        raise ConnectError(f"unknown threshold specifier {threshold!r}")

    independent = []
    core = []
    k = len(matrix.labels)
    for i, name in enumerate(matrix.labels):
        others = [matrix.values[i][j] for j in range(k) if j != i]
        if all(v < resolved for v in others):
            independent.append(name)
        else:
            core.append(name)
    return IndependencePartition(tuple(independent), tuple(core), method)


def _average_linkage_merges(
    dist: np.ndarray,
) -> list[tuple[float, frozenset[int], frozenset[int]]]:
    """Full agglomerative merge sequence under average linkage.

    Cluster distance is the mean pairwise point distance. Ties break on
    the smallest member indices for determinism. Returns a list of
    (height, left_members, right_members) in merge order.
    """
    clusters: list[frozenset[int]] = [frozenset((i,)) for i in range(len(dist))]
    merges: list[tuple[float, frozenset[int], frozenset[int]]] = []

    def cluster_distance(a: frozenset[int], b: frozenset[int]) -> float:
        return float(np.mean([dist[i, j] for i in a for j in b]))

    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = cluster_distance(clusters[i], clusters[j])
                key = (d, sorted(clusters[i])[0], sorted(clusters[j])[0])
                if best is None or key < best[0]:
                    best = (key, i, j)
        (d, _, _), i, j = best
        merges.append((d, clusters[i], clusters[j]))
        merged = clusters[i] | clusters[j]
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append(merged)
    return merges


def hierarchical_independent(
    matrix: AssociationMatrix,
    *,
    distance_cut: float | None = None,
    cluster_count: int | None = None,
) -> IndependencePartition:
    """Hierarchical-clustering independence determination.

    Each column's feature vector is its row of the association matrix;
    average-linkage agglomerative clustering runs on the Euclidean
    distances between those vectors. After cutting the merge sequence
    (at a distance, or at a target cluster count, or by default at the
    median merge height), singleton clusters are the independent
    columns.
    """
    k = len(matrix.labels)
    if k < 2:
        raise ConnectError("hierarchical method needs at least 2 columns")
    if distance_cut is not None and cluster_count is not None:
        raise ConnectError("give either distance_cut or cluster_count, not both")
    if distance_cut is not None and distance_cut < 0:
        raise ConnectError(f"distance cut must be non-negative, got {distance_cut}")
    if cluster_count is not None and not 1 <= cluster_count <= k:
        raise ConnectError(
            f"cluster count must be in [1, {k}], got {cluster_count}"
        )

    rows = matrix.as_array()
    dist = np.sqrt(((rows[:, None, :] - rows[None, :, :]) ** 2).sum(axis=2))
    merges = _average_linkage_merges(dist)

    if cluster_count is not None:
        applied = merges[: k - cluster_count]
        method = f"hierarchical(count={cluster_count})"
    else:
        if distance_cut is None:
            heights = [h for h, _, _ in merges]
            distance_cut = float(np.median(heights))
            method = f"hierarchical(median_height={distance_cut:.6g})"
        else:
            method = f"hierarchical(distance={distance_cut:.6g})"
        applied = [m for m in merges if m[0] <= distance_cut]

    clusters: list[set[int]] = [{i} for i in range(k)]
    for _, left, right in applied:
        keep = [c for c in clusters if not (c & left) and not (c & right)]
        merged = set().union(*[c for c in clusters if c & (left | right)])
        clusters = keep + [merged]

    independent = []
    core = []
    for i, name in enumerate(matrix.labels):
        cluster = next(c for c in clusters if i in c)
        if len(cluster) == 1:
            independent.append(name)
        else:
            core.append(name)
    return IndependencePartition(tuple(independent), tuple(core), method)


@dataclass(frozen=True)
class SubjectPools:
    """Per-subject multisets of observed values for each removed column."""

    columns: tuple[str, ...]
    pools: dict[str, dict[str, tuple[str, ...]]]  # column -> subject -> values

    def pool_for(self, column: str, subject: str) -> tuple[str, ...]:
        try:
            pool = self.pools[column][subject]
        except KeyError:
            raise ConnectError(
                f"no bootstrap pool for subject {subject!r} in column {column!r}"
            ) from None
        if not pool:
            raise ConnectError(
                f"empty bootstrap pool for subject {subject!r} in column {column!r}"
            )
        return pool

    def to_json_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "pools": {
                col: {s: list(vals) for s, vals in by_subject.items()}
                for col, by_subject in self.pools.items()
            },
        }


def _pools_from(tables: Sequence[Table], columns: Sequence[str]) -> SubjectPools:
    pools: dict[str, dict[str, tuple[str, ...]]] = {}
    for col in columns:
        owner = next((t for t in tables if col in t.column_names), None)
        if owner is None:
            raise ConnectError(f"no source table holds removed column {col!r}")
        idx = owner.index_of(col)
        by_subject: dict[str, list[str]] = {}
        for subject, row_ids in build_subject_index(owner).items():
            by_subject[subject] = [owner.rows[r][idx] for r in row_ids]
        pools[col] = {s: tuple(v) for s, v in by_subject.items()}
    return SubjectPools(tuple(columns), pools)


def reduce_core(
    flattened: Table,
    partition: IndependencePartition,
    sources: Sequence[Table] | None = None,
) -> tuple[Table, SubjectPools]:
    """Remove independent columns, deduplicate, and build bootstrap pools.

    Duplicate rows appear once the independent columns are gone; one
    copy of each is kept (first occurrence). Pools hold each subject's
    observed values for every removed column, taken from the original
    child tables when `sources` is given (so engaged subjects do not
    inflate pool multiplicities through the Cartesian product), else
    from the flattened table itself.
    """
    payload = {s.name for s in flattened.payload_specs}
    unknown = sorted(set(partition.analyzed_cols) - payload)
    if unknown:
        raise ConnectError(
            f"partition names columns absent from the flattened payload: {unknown}"
        )
    removed = list(partition.independent_cols)
    pools = _pools_from(sources if sources is not None else [flattened], removed)

    core_schema_names = [s.name for s in flattened.schema if s.name not in set(removed)]
    reduced = flattened.select_columns(core_schema_names)
    seen: set[tuple[str, ...]] = set()
    rows = []
    for row in reduced.rows:
        if row not in seen:
            seen.add(row)
            rows.append(row)
    core = Table(reduced.schema, rows)
    return core, pools


def bootstrap_append(core: Table, pools: SubjectPools, seed: int) -> Table:
    """Re-attach removed columns by per-subject bootstrap sampling.

    For every core row and removed column, one value is drawn uniformly
    with replacement from that row's subject's pool. The random stream
    is split per row index, so the draw for row i never depends on how
    many draws other rows consumed.
    """
    subject = core.subject_spec
    if subject is None:
        raise SchemaError("core table has no subject_id column")
    sub_idx = core.index_of(subject.name)

    appended_specs = tuple(
        ColumnSpec(name, "categorical", "payload") for name in pools.columns
    )
    schema = core.schema + appended_specs
    streams = np.random.SeedSequence(seed).spawn(len(core.rows))
    rows = []
    for i, row in enumerate(core.rows):
        rng = np.random.default_rng(streams[i])
        cells = list(row)
        for col in pools.columns:
            pool = pools.pool_for(col, row[sub_idx])
            cells.append(pool[int(rng.integers(0, len(pool)))])
        rows.append(tuple(cells))
    return Table(schema, rows)
