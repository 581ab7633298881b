import itertools
import math
import random

import numpy as np
import pytest

from tabsynth.errors import EvaluationError, SchemaError
from tabsynth.fidelity import (
    METRIC_KS_P,
    METRIC_W_DIST,
    CategoricalDistribution,
    compare_reports,
    conditional_dist,
    cross_feature_score,
    fidelity_report,
    format_comparison_table,
    ks_p,
    ks_statistic,
    w_dist,
)
from tabsynth.table import ColumnSpec, Table


def dist(values):
    return CategoricalDistribution.from_values([str(v) for v in values])


def ks_oracle(sample_a, sample_b):
    """CDF step enumeration over the merged support."""
    support = sorted(set(sample_a) | set(sample_b))
    d = 0.0
    for x in support:
        cdf_a = sum(1 for v in sample_a if v <= x) / len(sample_a)
        cdf_b = sum(1 for v in sample_b if v <= x) / len(sample_b)
        d = max(d, abs(cdf_a - cdf_b))
    return d


def w_oracle(sample_a, sample_b):
    """Hand CDF-area integration with unit gaps between support positions."""
    support = sorted(set(sample_a) | set(sample_b))
    total = 0.0
    for x in support[:-1]:
        cdf_a = sum(1 for v in sample_a if v <= x) / len(sample_a)
        cdf_b = sum(1 for v in sample_b if v <= x) / len(sample_b)
        total += abs(cdf_a - cdf_b)
    return total


class TestDistribution:
    def test_from_values(self):
        d = dist(["x", "y", "y"])
        assert d.support == ("x", "y")
        assert d.probabilities == (1 / 3, 2 / 3)
        assert d.sample_size == 3

    def test_numeric_support_sorted_numerically(self):
        d = dist(["10", "2", "2"])
        assert d.support == ("2", "10")

    def test_empty_rejected(self):
        with pytest.raises(EvaluationError, match="empty"):
            CategoricalDistribution.from_values([])

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(EvaluationError):
            CategoricalDistribution(("a", "b"), (0.5, 0.6), 10)


class TestKs:
    def test_identical_distributions(self):
        d = dist([1, 2, 3])
        assert ks_statistic(d, d) == 0.0
        assert ks_p(d, d) == 1.0

    def test_disjoint_point_masses(self):
        assert ks_statistic(dist([0]), dist([1])) == 1.0

    def test_one_two_three_vs_two_three_four(self):
        a, b = dist([1, 2, 3]), dist([2, 3, 4])
        assert abs(ks_statistic(a, b) - 1 / 3) < 1e-12
        assert abs(ks_statistic(a, b) - ks_oracle([1, 2, 3], [2, 3, 4])) < 1e-12

    def test_symmetry(self):
        a, b = dist([1, 1, 2]), dist([2, 3])
        assert ks_statistic(a, b) == ks_statistic(b, a)
        assert ks_p(a, b) == ks_p(b, a)

    def test_matches_oracle_on_random_samples(self):
        rng = random.Random(4)
        for _ in range(50):
            sa = [rng.randint(0, 5) for _ in range(rng.randint(1, 30))]
            sb = [rng.randint(0, 5) for _ in range(rng.randint(1, 30))]
            assert abs(ks_statistic(dist(sa), dist(sb)) - ks_oracle(sa, sb)) < 1e-12

    def test_p_value_decreases_with_sample_size(self):
        small = ks_p(dist([0] * 5 + [1] * 5), dist([0] * 8 + [1] * 2))
        large = ks_p(dist([0] * 500 + [1] * 500), dist([0] * 800 + [1] * 200))
        assert large < small


class TestWasserstein:
    def test_identical(self):
        d = dist([0, 1, 2])
        assert w_dist(d, d) == 0.0

    def test_adjacent_point_masses(self):
        assert w_dist(dist([0]), dist([1])) == 1.0

    def test_uniform_vs_point_mass(self):
        assert abs(w_dist(dist([0, 1]), dist([0])) - 0.5) < 1e-12

    def test_symmetry(self):
        a, b = dist([0, 0, 1]), dist([1, 2])
        assert w_dist(a, b) == w_dist(b, a)

    def test_matches_oracle_on_random_samples(self):
        rng = random.Random(9)
        for _ in range(50):
            sa = [rng.randint(0, 5) for _ in range(rng.randint(1, 30))]
            sb = [rng.randint(0, 5) for _ in range(rng.randint(1, 30))]
            assert abs(w_dist(dist(sa), dist(sb)) - w_oracle(sa, sb)) < 1e-12

    def test_triangle_inequality_spot_check(self):
        # the inequality holds on a fixed support, so every sample
        # covers all of {0..4} and the three merged supports coincide
        rng = random.Random(13)
        for _ in range(200):
            samples = [
                list(range(5)) + [rng.randint(0, 4) for _ in range(rng.randint(1, 15))]
                for _ in range(3)
            ]
            a, b, c = (dist(s) for s in samples)
            assert w_dist(a, c) <= w_dist(a, b) + w_dist(b, c) + 1e-12


def two_col_table(pairs):
    return Table(
        [ColumnSpec("cond"), ColumnSpec("target")],
        [(str(a), str(b)) for a, b in pairs],
    )


class TestConditionalDist:
    def test_point_mass_when_target_constant(self):
        t = two_col_table([("A", "x"), ("A", "x"), ("B", "y")])
        d = conditional_dist(t, "target", "cond", "A")
        assert d.support == ("x",)
        assert d.probabilities == (1.0,)

    def test_direct_count(self):
        t = two_col_table([("A", "x"), ("A", "y"), ("A", "y")])
        d = conditional_dist(t, "target", "cond", "A")
        assert d.support == ("x", "y")
        assert d.probabilities == (1 / 3, 2 / 3)
        assert d.sample_size == 3

    def test_unseen_value_rejected(self):
        t = two_col_table([("A", "x")])
        with pytest.raises(EvaluationError, match="'Z'"):
            conditional_dist(t, "target", "cond", "Z")


class TestCrossFeatureScore:
    def test_identity_gives_one(self):
        t = two_col_table([("A", "x"), ("A", "y"), ("B", "z")])
        score = cross_feature_score(t, t, "cond", "target", METRIC_KS_P)
        assert score.z == 1.0

    def test_missing_cond_value_capped_weighted(self):
        # weight of 'B' in original is 0.2; synthetic lacks it entirely
        orig = two_col_table([("A", "x")] * 8 + [("B", "y")] * 2)
        syn = two_col_table([("A", "x")] * 10)
        score = cross_feature_score(orig, syn, "cond", "target", METRIC_KS_P)
        assert score.z <= 0.8 + 1e-12
        detail = {d.value: d for d in score.details}
        assert detail["B"].similarity == 0.0
        assert detail["B"].syn_n == 0

    def test_single_cond_value_weight_one(self):
        orig = two_col_table([("A", "x"), ("A", "y")])
        syn = two_col_table([("A", "x"), ("A", "x")])
        score = cross_feature_score(orig, syn, "cond", "target", METRIC_KS_P)
        assert len(score.details) == 1
        assert score.z == score.details[0].similarity

    def test_z_recomputable_from_details(self):
        rng = random.Random(3)
        pairs = [(rng.randint(0, 3), rng.randint(0, 2)) for _ in range(80)]
        syn_pairs = [(rng.randint(0, 3), rng.randint(0, 2)) for _ in range(60)]
        orig, syn = two_col_table(pairs), two_col_table(syn_pairs)
        for metric in (METRIC_KS_P, METRIC_W_DIST):
            score = cross_feature_score(orig, syn, "cond", "target", metric)
            assert abs(score.z - score.recompute_z()) < 1e-12

    def test_invariant_under_row_permutation(self):
        rng = random.Random(8)
        pairs = [(rng.randint(0, 2), rng.randint(0, 2)) for _ in range(50)]
        syn_pairs = [(rng.randint(0, 2), rng.randint(0, 2)) for _ in range(50)]
        orig, syn = two_col_table(pairs), two_col_table(syn_pairs)
        base = cross_feature_score(orig, syn, "cond", "target", METRIC_KS_P).z
        for _ in range(5):
            rng.shuffle(pairs)
            rng.shuffle(syn_pairs)
            shuffled = cross_feature_score(
                two_col_table(pairs), two_col_table(syn_pairs), "cond", "target", METRIC_KS_P
            ).z
            assert shuffled == base

    def test_schema_mismatch_rejected(self):
        a = two_col_table([("A", "x")])
        b = Table([ColumnSpec("cond"), ColumnSpec("other")], [("A", "x")])
        with pytest.raises(SchemaError):
            cross_feature_score(a, b, "cond", "target", METRIC_KS_P)

    def test_w_dist_missing_cond_scores_support_diameter(self):
        orig = two_col_table([("A", "x"), ("B", "x"), ("B", "z")])
        syn = two_col_table([("B", "x"), ("B", "z")])
        score = cross_feature_score(orig, syn, "cond", "target", METRIC_W_DIST)
        detail = {d.value: d for d in score.details}
        # merged target support {x, z} -> diameter 1
        assert detail["A"].similarity == 1.0


def three_col_table(rows):
    return Table(
        [ColumnSpec("a"), ColumnSpec("b"), ColumnSpec("c")],
        [tuple(str(x) for x in r) for r in rows],
    )


class TestFidelityReport:
    def test_pair_cardinality(self):
        rng = random.Random(0)
        rows = [(rng.randint(0, 2), rng.randint(0, 2), rng.randint(0, 2)) for _ in range(30)]
        t = three_col_table(rows)
        report = fidelity_report(t, t)
        assert len(report.pairs) == 3 * 2

    def test_identity_mass_in_top_ks_bin(self):
        rng = random.Random(1)
        rows = [(rng.randint(0, 2), rng.randint(0, 2), rng.randint(0, 2)) for _ in range(30)]
        t = three_col_table(rows)
        report = fidelity_report(t, t)
        hist = report.histograms[METRIC_KS_P]
        assert hist.counts[-1] == len(report.pairs)
        assert sum(hist.counts[:-1]) == 0
        assert report.summaries[METRIC_KS_P].mean == 1.0
        assert report.summaries[METRIC_W_DIST].max == 0.0

    def test_noisy_generator_scores_lower(self):
        rng = np.random.default_rng(5)
        n = 800
        base = rng.integers(0, 3, size=(n, 3))
        orig = three_col_table(base.tolist())
        faithful = three_col_table(rng.integers(0, 3, size=(n, 3)).tolist())
        # noisy generator: one column heavily skewed away from uniform
        noisy_rows = rng.integers(0, 3, size=(n, 3))
        noisy_rows[:, 2] = 0
        noisy = three_col_table(noisy_rows.tolist())
        z_faithful = fidelity_report(orig, faithful).summaries[METRIC_KS_P].mean
        z_noisy = fidelity_report(orig, noisy).summaries[METRIC_KS_P].mean
        assert z_noisy < z_faithful

    def test_subject_column_excluded_by_default(self):
        t = Table(
            [ColumnSpec("user", "categorical", "subject_id"), ColumnSpec("a"), ColumnSpec("b")],
            [("u1", "x", "y"), ("u2", "x", "z")],
        )
        report = fidelity_report(t, t)
        assert ("user", "a") not in report.pairs
        assert len(report.pairs) == 2

    def test_json_round_trip(self):
        rng = random.Random(2)
        rows = [(rng.randint(0, 2), rng.randint(0, 2), rng.randint(0, 2)) for _ in range(30)]
        syn_rows = [(rng.randint(0, 2), rng.randint(0, 2), rng.randint(0, 2)) for _ in range(30)]
        report = fidelity_report(three_col_table(rows), three_col_table(syn_rows))
        from tabsynth.fidelity import FidelityReport

        restored = FidelityReport.from_json_dict(report.to_json_dict())
        assert restored.pairs == report.pairs
        assert restored.z_values(METRIC_KS_P) == report.z_values(METRIC_KS_P)
        assert restored.z_values(METRIC_W_DIST) == report.z_values(METRIC_W_DIST)


class TestCompareReports:
    def make_reports(self):
        rng = random.Random(3)
        rows = [(rng.randint(0, 2), rng.randint(0, 2), rng.randint(0, 2)) for _ in range(40)]
        syn1 = [(rng.randint(0, 2), rng.randint(0, 2), rng.randint(0, 2)) for _ in range(40)]
        orig = three_col_table(rows)
        return fidelity_report(orig, orig), fidelity_report(orig, three_col_table(syn1))

    def test_self_comparison_all_unchanged(self):
        a, _ = self.make_reports()
        cmp = compare_reports(a, a)
        for metric in (METRIC_KS_P, METRIC_W_DIST):
            assert cmp.metrics[metric]["unchanged"] == len(a.pairs)
            assert cmp.metrics[metric]["improved"] == 0

    def test_dominating_report_improves_everywhere(self):
        perfect, imperfect = self.make_reports()
        cmp = compare_reports(perfect, imperfect)
        counts = cmp.metrics[METRIC_KS_P]
        assert counts["improved"] + counts["unchanged"] == len(perfect.pairs)
        assert counts["worsened"] == 0

    def test_counts_partition_pairs(self):
        a, b = self.make_reports()
        cmp = compare_reports(a, b)
        for metric in (METRIC_KS_P, METRIC_W_DIST):
            c = cmp.metrics[metric]
            assert c["improved"] + c["worsened"] + c["unchanged"] == len(a.pairs)

    def test_pair_set_mismatch_rejected(self):
        a, _ = self.make_reports()
        t = two_col_table([("A", "x")])
        other = fidelity_report(t, t)
        with pytest.raises(EvaluationError, match="pair sets"):
            compare_reports(a, other)

    def test_half_improved_construction(self):
        # two pairs improved, two worsened, by symmetric construction
        rng = np.random.default_rng(11)
        n = 400
        orig_rows = np.column_stack(
            [rng.integers(0, 2, n), rng.integers(0, 2, n), rng.integers(0, 2, n)]
        )
        orig = three_col_table(orig_rows.tolist())
        syn_a_rows = orig_rows.copy()
        syn_a_rows[:, 0] = 0  # degrade column a
        syn_b_rows = orig_rows.copy()
        syn_b_rows[:, 1] = 0  # degrade column b
        report_a = fidelity_report(orig, three_col_table(syn_a_rows.tolist()))
        report_b = fidelity_report(orig, three_col_table(syn_b_rows.tolist()))
        cmp = compare_reports(report_a, report_b)
        counts = cmp.metrics[METRIC_KS_P]
        assert counts["improved"] > 0 and counts["worsened"] > 0

    def test_format_table_mentions_all_metrics(self):
        a, b = self.make_reports()
        text = format_comparison_table(compare_reports(a, b))
        assert "ks_p" in text and "w_dist" in text and "improved" in text
