"""Conditional-distribution fidelity between original and synthetic tables.

For an ordered column pair (cond, target), the empirical conditional
distribution of target given each cond value is compared between the
two tables with a similarity metric, and the per-condition similarities
are averaged weighted by the original-table probability of each cond
value. Two metrics:

* ks_p   — p-value of the two-sample Kolmogorov-Smirnov test over the
           merged ordered support (higher is better);
* w_dist — 1-D Wasserstein distance, the area between the two CDFs
           (lower is better).

Categorical supports get numeric positions by placing labels at integer
positions in the sorted order of the merged support (numeric sort when
every label parses as a number, else lexicographic). This integer
spacing is a convention and directly scales w_dist magnitudes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import kolmogorov

from .errors import EvaluationError, SchemaError
from .table import Table

METRIC_KS_P = "ks_p"
METRIC_W_DIST = "w_dist"
METRICS = (METRIC_KS_P, METRIC_W_DIST)

# Orientation: which direction means "more similar".
ORIENTATION = {METRIC_KS_P: "higher_better", METRIC_W_DIST: "lower_better"}

_TIE_TOL = 1e-12


@dataclass(frozen=True)
class CategoricalDistribution:
    """Empirical distribution over an ordered label support."""

    support: tuple[str, ...]
    probabilities: tuple[float, ...]
    sample_size: int

    def __post_init__(self) -> None:
        if not self.support:
            raise EvaluationError("empty distribution: no support")
        if self.sample_size < 1:
            raise EvaluationError("empty distribution: sample_size < 1")
        if len(set(self.support)) != len(self.support):
            raise EvaluationError("distribution support entries must be distinct")
        if len(self.probabilities) != len(self.support):
            raise EvaluationError("support and probabilities length mismatch")
        if any(p < 0 for p in self.probabilities):
            raise EvaluationError("probabilities must be non-negative")
        if abs(sum(self.probabilities) - 1.0) > 1e-12:
            raise EvaluationError(
                f"probabilities sum to {sum(self.probabilities)!r}, not 1"
            )

    @classmethod
    def from_values(cls, values: Sequence[str]) -> "CategoricalDistribution":
        if not values:
            raise EvaluationError("empty distribution: no observations")
        counts: dict[str, int] = {}
        for v in values:
            counts[v] = counts.get(v, 0) + 1
        support = sort_labels(counts.keys())
        n = len(values)
        return cls(tuple(support), tuple(counts[s] / n for s in support), n)

    def probability_of(self, label: str) -> float:
        try:
            return self.probabilities[self.support.index(label)]
        except ValueError:
            return 0.0


def _numeric_key(label: str) -> float | None:
    try:
        x = float(label)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def sort_labels(labels) -> list[str]:
    """Numeric sort when every label parses as a finite number, else lexicographic."""
    labels = list(labels)
    keys = [_numeric_key(v) for v in labels]
    if all(k is not None for k in keys):
        return sorted(labels, key=lambda v: (float(v), v))
    return sorted(labels)


def merged_support(
    a: CategoricalDistribution, b: CategoricalDistribution
) -> list[str]:
    return sort_labels(set(a.support) | set(b.support))


def _cdfs(
    a: CategoricalDistribution, b: CategoricalDistribution
) -> tuple[list[str], list[float], list[float]]:
    support = merged_support(a, b)
    cdf_a, cdf_b = [], []
    acc_a = acc_b = 0.0
    for label in support:
        acc_a += a.probability_of(label)
        acc_b += b.probability_of(label)
        cdf_a.append(acc_a)
        cdf_b.append(acc_b)
    return support, cdf_a, cdf_b


def ks_statistic(a: CategoricalDistribution, b: CategoricalDistribution) -> float:
    """Two-sample KS statistic D = max |CDF_a - CDF_b| over the merged support."""
    _, cdf_a, cdf_b = _cdfs(a, b)
    return max(abs(x - y) for x, y in zip(cdf_a, cdf_b))


def ks_p(a: CategoricalDistribution, b: CategoricalDistribution) -> float:
    """Asymptotic two-sample KS p-value with effective size n*m/(n+m).

    Identical distributions give D = 0 and p = 1 exactly.
    """
    d = ks_statistic(a, b)
    n, m = a.sample_size, b.sample_size
    effective = n * m / (n + m)
    p = float(kolmogorov(math.sqrt(effective) * d))
    return min(max(p, 0.0), 1.0)


def w_dist(a: CategoricalDistribution, b: CategoricalDistribution) -> float:
    """1-D Wasserstein distance: sum of |CDF difference| x gap width.

    With integer label positions every gap has width 1, so this is the
    sum of absolute CDF differences over all but the last support point.
    """
    _, cdf_a, cdf_b = _cdfs(a, b)
    return sum(abs(x - y) for x, y in zip(cdf_a[:-1], cdf_b[:-1]))


def conditional_dist(
    table: Table, target: str, cond: str, cond_value: str
) -> CategoricalDistribution:
    """Empirical distribution of target over rows where cond == cond_value."""
    cond_idx = table.index_of(cond)
    target_idx = table.index_of(target)
    values = [row[target_idx] for row in table.rows if row[cond_idx] == cond_value]
    if not values:
        raise EvaluationError(
            f"conditioning value {cond_value!r} does not occur in column {cond!r}"
        )
    return CategoricalDistribution.from_values(values)


@dataclass(frozen=True)
class ConditionDetail:
    value: str
    weight: float
    similarity: float
    orig_n: int
    syn_n: int


@dataclass(frozen=True)
class PairScore:
    """Weighted conditional-distribution similarity for one ordered pair."""

    cond: str
    target: str
    metric: str
    z: float
    orientation: str
    details: tuple[ConditionDetail, ...]

    def recompute_z(self) -> float:
        return sum(d.weight * d.similarity for d in self.details)

    def to_json_dict(self) -> dict:
        return {
            "cond": self.cond,
            "target": self.target,
            "metric": self.metric,
            "z": self.z,
            "orientation": self.orientation,
            "details": [
                {
                    "value": d.value,
                    "weight": d.weight,
                    "similarity": d.similarity,
                    "orig_n": d.orig_n,
                    "syn_n": d.syn_n,
                }
                for d in self.details
            ],
        }


def _check_same_schema(orig: Table, syn: Table) -> None:
    if orig.schema != syn.schema:
        raise SchemaError("original and synthetic tables must share a schema")


def cross_feature_score(
    orig: Table,
    syn: Table,
    cond: str,
    target: str,
    metric: str,
    pool_rare_below: int = 0,
) -> PairScore:
    """Score one ordered (cond, target) pair.

    Every cond value observed in the original table contributes its
    conditional-distribution similarity, weighted by the original
    probability of that value. Cond values absent from the synthetic
    table score as maximal dissimilarity (p = 0, or W = the diameter of
    the pair's merged target support), so missing modes are penalized.
    """
    if metric not in METRICS:
        raise EvaluationError(f"unknown metric {metric!r} (expected one of {METRICS})")
    _check_same_schema(orig, syn)
    if cond == target:
        raise EvaluationError("cond and target must be different columns")

    orig_cond = list(orig.column_values(cond))
    syn_cond = list(syn.column_values(cond))
    if pool_rare_below > 0:
        counts: dict[str, int] = {}
        for v in orig_cond:
            counts[v] = counts.get(v, 0) + 1
        rare = {v for v, c in counts.items() if c < pool_rare_below}
        if rare:
            orig_cond = ["__other__" if v in rare else v for v in orig_cond]
            syn_cond = ["__other__" if v in rare else v for v in syn_cond]

    orig_target = orig.column_values(target)
    syn_target = syn.column_values(target)
    global_target_support = sort_labels(set(orig_target) | set(syn_target))
    diameter = len(global_target_support) - 1

    n = len(orig_cond)
    if n == 0:
        raise EvaluationError("original table has no rows")
    weights: dict[str, int] = {}
    for v in orig_cond:
        weights[v] = weights.get(v, 0) + 1

    syn_by_value: dict[str, list[str]] = {}
    for v, t in zip(syn_cond, syn_target):
        syn_by_value.setdefault(v, []).append(t)
    orig_by_value: dict[str, list[str]] = {}
    for v, t in zip(orig_cond, orig_target):
        orig_by_value.setdefault(v, []).append(t)

    details = []
    numerator = 0.0
    for value in sort_labels(weights.keys()):
        count = weights[value]
        orig_dist = CategoricalDistribution.from_values(orig_by_value[value])
        syn_values = syn_by_value.get(value)
        if syn_values:
            syn_dist = CategoricalDistribution.from_values(syn_values)
            sim = ks_p(orig_dist, syn_dist) if metric == METRIC_KS_P else w_dist(orig_dist, syn_dist)
            syn_n = len(syn_values)
        else:
            sim = 0.0 if metric == METRIC_KS_P else float(diameter)
            syn_n = 0
        details.append(
            ConditionDetail(value, count / n, sim, orig_dist.sample_size, syn_n)
        )
        numerator += count * sim
    # dividing the count-weighted sum once keeps the identity fixed
    # point exact: all similarities 1 gives z = n/n = 1.0
    z = numerator / n
    return PairScore(cond, target, metric, z, ORIENTATION[metric], tuple(details))


@dataclass(frozen=True)
class MetricSummary:
    max: float
    min: float
    mean: float


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {"edges": list(self.edges), "counts": list(self.counts)}


@dataclass(frozen=True)
class ReportComparison:
    """Per-metric improved/worsened/unchanged counts between two reports."""

    metrics: dict[str, dict]  # metric -> {improved, worsened, unchanged, deltas...}

    def to_json_dict(self) -> dict:
        return {"metrics": self.metrics}


@dataclass
class FidelityReport:
    """All ordered-pair scores for both metrics, plus aggregates."""

    pairs: tuple[tuple[str, str], ...]
    scores: dict[str, list[PairScore]]  # metric -> scores aligned with pairs
    histograms: dict[str, Histogram]
    summaries: dict[str, MetricSummary]
    comparison: ReportComparison | None = None

    def z_values(self, metric: str) -> list[float]:
        return [s.z for s in self.scores[metric]]

    def to_json_dict(self) -> dict:
        out = {
            "pairs": [list(p) for p in self.pairs],
            "orientations": dict(ORIENTATION),
            "scores": {
                metric: [s.to_json_dict() for s in scores]
                for metric, scores in self.scores.items()
            },
            "histograms": {m: h.to_json_dict() for m, h in self.histograms.items()},
            "summaries": {
                m: {"max": s.max, "min": s.min, "mean": s.mean}
                for m, s in self.summaries.items()
            },
        }
        if self.comparison is not None:
            out["comparison"] = self.comparison.to_json_dict()
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "FidelityReport":
        pairs = tuple((p[0], p[1]) for p in data["pairs"])
        scores = {}
        for metric, entries in data["scores"].items():
            scores[metric] = [
                PairScore(
                    cond=e["cond"],
                    target=e["target"],
                    metric=e["metric"],
                    z=e["z"],
                    orientation=e["orientation"],
                    details=tuple(
                        ConditionDetail(
                            d["value"], d["weight"], d["similarity"], d["orig_n"], d["syn_n"]
                        )
                        for d in e["details"]
                    ),
                )
                for e in entries
            ]
        histograms = {
            m: Histogram(tuple(h["edges"]), tuple(h["counts"]))
            for m, h in data["histograms"].items()
        }
        summaries = {
            m: MetricSummary(s["max"], s["min"], s["mean"])
            for m, s in data["summaries"].items()
        }
        return cls(pairs, scores, histograms, summaries)


def default_pairs(table: Table) -> list[tuple[str, str]]:
    """All ordered pairs over payload columns (subject IDs measure nothing)."""
    names = [s.name for s in table.payload_specs]
    return [(a, b) for a in names for b in names if a != b]


def _histogram(values: list[float], metric: str, bins: int = 10) -> Histogram:
    if metric == METRIC_KS_P:
        lo, hi = 0.0, 1.0
    else:
        hi = max(max(values), 1e-9) if values else 1.0
        lo = 0.0
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return Histogram(tuple(float(e) for e in edges), tuple(int(c) for c in counts))


def fidelity_report(
    orig: Table,
    syn: Table,
    pairs: Sequence[tuple[str, str]] | None = None,
    pool_rare_below: int = 0,
) -> FidelityReport:
    """Score every requested ordered pair under both metrics."""
    _check_same_schema(orig, syn)
    pair_list = list(pairs) if pairs is not None else default_pairs(orig)
    if not pair_list:
        raise EvaluationError("no column pairs to evaluate")
    scores: dict[str, list[PairScore]] = {m: [] for m in METRICS}
    for cond, target in pair_list:
        for metric in METRICS:
            scores[metric].append(
                cross_feature_score(orig, syn, cond, target, metric, pool_rare_below)
            )
    histograms = {}
    summaries = {}
    for metric in METRICS:
        zs = [s.z for s in scores[metric]]
        histograms[metric] = _histogram(zs, metric)
        summaries[metric] = MetricSummary(max(zs), min(zs), sum(zs) / len(zs))
    return FidelityReport(tuple(pair_list), scores, histograms, summaries)


def compare_reports(a: FidelityReport, b: FidelityReport) -> ReportComparison:
    """Classify each pair as improved/worsened/unchanged, a relative to b.

    Improvement is orientation-aware: a higher ks_p z or a lower w_dist
    z counts as improved. Ties within 1e-12 are unchanged.
    """
    if a.pairs != b.pairs:
        raise EvaluationError(
            "reports cover different pair sets and cannot be compared"
        )
    metrics: dict[str, dict] = {}
    for metric in METRICS:
        higher_better = ORIENTATION[metric] == "higher_better"
        improved = worsened = unchanged = 0
        deltas = []
        for sa, sb in zip(a.scores[metric], b.scores[metric]):
            delta = sa.z - sb.z
            deltas.append(delta)
            if abs(delta) <= _TIE_TOL:
                unchanged += 1
            elif (delta > 0) == higher_better:
                improved += 1
            else:
                worsened += 1
        metrics[metric] = {
            "improved": improved,
            "worsened": worsened,
            "unchanged": unchanged,
            "max_delta": max(deltas),
            "min_delta": min(deltas),
            "mean_delta": sum(deltas) / len(deltas),
        }
    return ReportComparison(metrics)


def format_comparison_table(comparison: ReportComparison) -> str:
    """Render improved/worsened counts as a fixed-width text table."""
    header = f"{'metric':<8} {'improved':>9} {'worsened':>9} {'unchanged':>10} {'max_d':>12} {'min_d':>12} {'mean_d':>12}"
    lines = [header, "-" * len(header)]
    for metric, row in comparison.metrics.items():
        lines.append(
            f"{metric:<8} {row['improved']:>9} {row['worsened']:>9} {row['unchanged']:>10} "
            f"{row['max_delta']:>12.6g} {row['min_delta']:>12.6g} {row['mean_delta']:>12.6g}"
        )
    return "\n".join(lines)


def write_long_csv(report: FidelityReport, path: str | Path) -> None:
    """Long-format export: cond, target, metric, z."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cond", "target", "metric", "z"))
        for metric in METRICS:
            for score in report.scores[metric]:
                w.writerow((score.cond, score.target, metric, repr(score.z)))


def write_histogram_csv(report: FidelityReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "bin_lo", "bin_hi", "count"))
        for metric in METRICS:
            h = report.histograms[metric]
            for lo, hi, count in zip(h.edges[:-1], h.edges[1:], h.counts):
                w.writerow((metric, repr(lo), repr(hi), count))
