"""Acceptance suite: one test per criterion, one pass/fail line each.

Oracle- and property-based checks at pinned tolerances, plus
directional end-to-end checks on planted data. Run with -s to see the
per-criterion lines.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from tabsynth.cli import EXIT_OK, main
from tabsynth.connect import (
    IndependencePartition,
    association_matrix,
    bootstrap_append,
    cramers_v,
    hierarchical_independent,
    reduce_core,
    threshold_independent,
)
from tabsynth.contextual import detect_contextual
from tabsynth.engine import SynthesizerConfig, fit, sample
from tabsynth.fidelity import (
    METRIC_KS_P,
    METRIC_W_DIST,
    CategoricalDistribution,
    fidelity_report,
    ks_p,
    ks_statistic,
    w_dist,
)
from tabsynth.semantic import (
    RewriteRule,
    apply_mapping,
    apply_rewrites,
    build_differentiability_mapping,
    invert_mapping,
    load_name_pool,
    reverse_rewrites,
)
from tabsynth.table import ColumnSpec, Table, flatten_join, write_csv

from planted import (
    contextual_instance,
    correlated_blocks_table,
    engaged_bias_children,
    engaged_bias_truth,
    subject_spec,
    two_children,
    write_pipeline_inputs,
)


def report(name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"[ACCEPTANCE] {name}: {status}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert passed, line


# ---------------------------------------------------------------------------


def chi2_oracle_from_columns(col_a, col_b):
    """Direct expected-count summation over the observed contingency table."""
    cats_a = sorted(set(col_a))
    cats_b = sorted(set(col_b))
    counts = {(x, y): 0 for x in cats_a for y in cats_b}
    for x, y in zip(col_a, col_b):
        counts[(x, y)] += 1
    n = len(col_a)
    k = min(len(cats_a) - 1, len(cats_b) - 1)
    if k == 0:
        return 0.0
    chi2 = 0.0
    for x in cats_a:
        row_total = sum(counts[(x, y)] for y in cats_b)
        for y in cats_b:
            col_total = sum(counts[(xx, y)] for xx in cats_a)
            expected = row_total * col_total / n
            chi2 += (counts[(x, y)] - expected) ** 2 / expected
    return math.sqrt(chi2 / (n * k))


def materialize(contingency):
    col_a, col_b = [], []
    for i, row in enumerate(contingency):
        for j, count in enumerate(row):
            col_a.extend([f"r{i}"] * count)
            col_b.extend([f"c{j}"] * count)
    return col_a, col_b


def test_cramers_v_oracle_equivalence():
    """Exhaustive 2x2 small grid plus 1,000 random tables up to 4x4,
    cell counts <= 20, against the brute-force chi-square oracle."""
    start = time.monotonic()
    tolerance = 1e-9
    checked = 0
    worst = 0.0

    for cells in itertools.product(range(5), repeat=4):
        if sum(cells) == 0:
            continue
        contingency = [list(cells[:2]), list(cells[2:])]
        col_a, col_b = materialize(contingency)
        got = cramers_v(col_a, col_b)
        want = chi2_oracle_from_columns(col_a, col_b)
        worst = max(worst, abs(got - want))
        checked += 1

    rng = np.random.default_rng(2024)
    produced = 0
    while produced < 1000:
        r = int(rng.integers(2, 5))
        c = int(rng.integers(2, 5))
        contingency = rng.integers(0, 21, size=(r, c)).tolist()
        if sum(map(sum, contingency)) == 0:
            continue
        col_a, col_b = materialize(contingency)
        got = cramers_v(col_a, col_b)
        want = chi2_oracle_from_columns(col_a, col_b)
        worst = max(worst, abs(got - want))
        produced += 1
        checked += 1

    elapsed = time.monotonic() - start
    report(
        "cramers-v-oracle-equivalence",
        worst <= tolerance and elapsed < 10.0,
        f"{checked} tables, worst |diff| = {worst:.2e}, {elapsed:.1f}s",
    )


def test_ks_and_wasserstein_metric_oracles():
    d123 = CategoricalDistribution.from_values(["1", "2", "3"])
    d234 = CategoricalDistribution.from_values(["2", "3", "4"])
    uniform01 = CategoricalDistribution.from_values(["0", "1"])
    point0 = CategoricalDistribution.from_values(["0"])

    checks = [
        abs(ks_statistic(d123, d234) - 1 / 3) <= 1e-12,
        abs(w_dist(uniform01, point0) - 0.5) <= 1e-12,
        ks_p(d123, d123) == 1.0,
        w_dist(d123, d123) == 0.0,
        ks_statistic(d123, d123) == 0.0,
    ]
    report("ks-w-metric-oracles", all(checks), f"{sum(checks)}/{len(checks)} exact")


def test_mapping_round_trips_randomized():
    rng = np.random.default_rng(7)
    pool = load_name_pool()
    cell_alphabet = [f"L{i}" for i in range(12)]
    failures = 0
    for case in range(1000):
        n_cols = int(rng.integers(2, 5))
        n_rows = int(rng.integers(1, 9))
        schema = [ColumnSpec(f"col{j}") for j in range(n_cols)]
        schema.append(ColumnSpec("free", "freeform"))
        rows = []
        for _ in range(n_rows):
            cells = [cell_alphabet[rng.integers(0, len(cell_alphabet))] for _ in range(n_cols)]
            cells.append("^".join(str(rng.integers(0, 99)) for _ in range(3)))
            rows.append(tuple(cells))
        t = Table(schema, rows)

        selected = [f"col{j}" for j in range(n_cols)]
        mapping = build_differentiability_mapping(
            t, selected, pool, seed=int(rng.integers(0, 2**31))
        )
        rule = RewriteRule("^", " and ", ("free",))

        enhanced = apply_rewrites(apply_mapping(t, mapping), [rule])
        # global uniqueness across mapped columns after apply
        value_sets = [set(enhanced.column_values(c)) for c in selected]
        for sa, sb in itertools.combinations(value_sets, 2):
            if sa & sb:
                failures += 1
                break
        restored, rejections = invert_mapping(reverse_rewrites(enhanced, [rule]), mapping)
        if restored != t or rejections:
            failures += 1
    report("mapping-round-trips", failures == 0, f"1000 cases, {failures} failures")


def test_bootstrap_pool_containment_and_determinism(tmp_path):
    rng = np.random.default_rng(55)
    subjects = [f"u{i:03d}" for i in range(20)]
    child_rows = []
    for s in subjects:
        for _ in range(int(rng.integers(2, 6))):
            child_rows.append((s, f"v{rng.integers(0, 4)}", f"w{rng.integers(0, 3)}"))
    child = Table(
        [subject_spec(), ColumnSpec("ind1"), ColumnSpec("ind2")], child_rows
    )
    core = Table(
        [subject_spec(), ColumnSpec("keep")],
        [(subjects[int(rng.integers(0, 20))], f"k{rng.integers(0, 3)}") for _ in range(5000)],
    )
    from tabsynth.connect import _pools_from

    pools = _pools_from([child], ["ind1", "ind2"])
    allowed = {
        col: {(s, v) for s, vals in pools.pools[col].items() for v in vals}
        for col in ("ind1", "ind2")
    }

    out = bootstrap_append(core, pools, seed=123)
    draws = 0
    violations = 0
    for row in out.rows:
        for col in ("ind1", "ind2"):
            draws += 1
            if (row[0], row[out.index_of(col)]) not in allowed[col]:
                violations += 1

    again = bootstrap_append(core, pools, seed=123)
    p1, p2 = tmp_path / "run1.csv", tmp_path / "run2.csv"
    write_csv(out, p1)
    write_csv(again, p2)
    identical = p1.read_bytes() == p2.read_bytes()

    report(
        "bootstrap-pool-containment",
        draws >= 10_000 and violations == 0 and identical,
        f"{draws} draws, {violations} out-of-pool, byte-identical={identical}",
    )


def test_contextual_recovery_50_instances():
    recovered = 0
    for s in range(50):
        child, contextual_cols, non_contextual = contextual_instance(seed=s)
        result = detect_contextual(child, m=0.98)
        found = sorted(result.contextual_columns)
        if found == sorted(contextual_cols):
            recovered += 1
    report("contextual-recovery", recovered == 50, f"{recovered}/50 exact recoveries")


def test_evaluator_fixed_point_full_run(tmp_path):
    a, b = two_children(seed=77)
    config = write_pipeline_inputs(tmp_path, a, b, backend="identity")
    code = main(["run", "--config", str(config)])
    data = json.loads((tmp_path / "out" / "fidelity_report.json").read_text())
    ks_ok = all(s["z"] == 1.0 for s in data["scores"][METRIC_KS_P])
    w_ok = all(s["z"] == 0.0 for s in data["scores"][METRIC_W_DIST])
    pairs = len(data["pairs"])
    report(
        "evaluator-fixed-point",
        code == EXIT_OK and pairs > 0 and ks_ok and w_ok,
        f"{pairs} ordered pairs at z=1/0",
    )


def test_directional_engaged_subject_bias():
    """Baseline synthesizer trained on the connected child must match the
    balanced truth at least as well as the flattened-trained variant in
    >= 15 of 20 seeded trials."""
    start = time.monotonic()
    pairs = [("pref", "channel"), ("channel", "pref")]
    wins = 0
    for s in range(20):
        a, b = engaged_bias_children(seed=s)
        flattened = flatten_join(a, b)
        matrix = association_matrix(flattened, ["pref", "channel"])
        partition = threshold_independent(matrix, "mean")
        core, pools = reduce_core(flattened, partition, sources=[a, b])
        connected = bootstrap_append(core, pools, seed=s)
        parent = Table([subject_spec()], [(f"u{i:03d}",) for i in range(10)])
        truth = engaged_bias_truth(seed=7000 + s)

        def mean_ks(training_child):
            model = fit(parent, training_child, SynthesizerConfig(backend="baseline"))
            out = sample(model, n_subjects=10, seed=100 + s)
            rep = fidelity_report(truth, out.child, pairs=pairs)
            return rep.summaries[METRIC_KS_P].mean

        if mean_ks(connected) >= mean_ks(flattened):
            wins += 1
    elapsed = time.monotonic() - start
    report(
        "directional-engaged-subject-bias",
        wins >= 15 and elapsed < 300.0,
        f"{wins}/20 trials favor the connected child, {elapsed:.1f}s",
    )


def test_independence_partitioning_planted_blocks():
    ok_threshold = 0
    ok_hierarchical = 0
    for s in range(20):
        t, expected = correlated_blocks_table(seed=s, n=2000)
        matrix = association_matrix(t, list(t.column_names))
        part_t = threshold_independent(matrix, "mean")
        part_h = hierarchical_independent(matrix, cluster_count=4)
        if sorted(part_t.independent_cols) == sorted(expected):
            ok_threshold += 1
        if sorted(part_h.independent_cols) == sorted(expected):
            ok_hierarchical += 1
    report(
        "independence-partitioning",
        ok_threshold >= 18 and ok_hierarchical >= 18,
        f"threshold {ok_threshold}/20, hierarchical {ok_hierarchical}/20",
    )


def test_dedup_reduction_exact_factor():
    results = []
    for k in (2, 3, 5):
        rows = []
        for s in range(12):
            for j in range(k):
                rows.append((f"u{s:02d}", f"stable{s % 4}", f"var{j}"))
        flattened = Table(
            [subject_spec(), ColumnSpec("keep"), ColumnSpec("drop")], rows
        )
        partition = IndependencePartition(("drop",), ("keep",), "planted")
        core, _ = reduce_core(flattened, partition)
        results.append(len(flattened) == k * len(core))
    report("dedup-reduction", all(results), f"factors 2,3,5 exact: {results}")
