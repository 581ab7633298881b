import json
from pathlib import Path

import pytest

from tabsynth.cli import (
    EXIT_CONFIG,
    EXIT_LOCK,
    EXIT_OK,
    main,
)
from tabsynth.fidelity import METRIC_KS_P, METRIC_W_DIST

from planted import two_children, write_pipeline_inputs

STAGE_ORDER = (
    "ingest",
    "extract-parent",
    "enhance",
    "connect",
    "encode",
    "fit",
    "sample",
    "invert",
    "evaluate",
)


def artifact_bytes(out_dir: Path) -> dict[str, bytes]:
    return {
        p.name: p.read_bytes()
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }


@pytest.fixture()
def identity_config(tmp_path):
    a, b = two_children(seed=5)
    return write_pipeline_inputs(tmp_path, a, b, backend="identity")


class TestFullRun:
    def test_identity_run_produces_all_artifacts(self, identity_config, capsys):
        assert main(["run", "--config", str(identity_config)]) == EXIT_OK
        out = identity_config.parent / "out"
        for name in (
            "child_a.csv",
            "parent.csv",
            "residual_a.csv",
            "enhanced_parent.csv",
            "flattened.csv",
            "association.csv",
            "association_long.csv",
            "partition.json",
            "pools.json",
            "connected_child.csv",
            "corpus_parent.txt",
            "corpus_child.txt",
            "synthetic_parent.csv",
            "synthetic_child.csv",
            "reference_child.csv",
            "fidelity_report.json",
            "fidelity_long.csv",
            "fidelity_hist.csv",
            "inversion_report.json",
            "manifest.json",
        ):
            assert (out / name).exists(), name
        assert "run completed" in capsys.readouterr().out

    def test_identity_run_hits_evaluator_fixed_point(self, identity_config):
        assert main(["run", "--config", str(identity_config)]) == EXIT_OK
        report = json.loads((identity_config.parent / "out" / "fidelity_report.json").read_text())
        ks_scores = report["scores"][METRIC_KS_P]
        w_scores = report["scores"][METRIC_W_DIST]
        assert ks_scores and all(s["z"] == 1.0 for s in ks_scores)
        assert all(s["z"] == 0.0 for s in w_scores)

    def test_mapping_destroyed_by_default(self, identity_config):
        assert main(["run", "--config", str(identity_config)]) == EXIT_OK
        out = identity_config.parent / "out"
        assert not (out / "mapping.txt").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["stages"]["invert"]["mapping"]["destroyed"] is True

    def test_keep_mapping_flag_warns_and_retains(self, identity_config, capsys):
        assert main(["run", "--config", str(identity_config), "--keep-mapping"]) == EXIT_OK
        out = identity_config.parent / "out"
        assert (out / "mapping.txt").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        record = manifest["stages"]["invert"]["mapping"]
        assert record["destroyed"] is False
        assert "warning" in record
        assert "warning" in capsys.readouterr().err

    def test_manifest_records_versions_and_seeds(self, identity_config):
        assert main(["run", "--config", str(identity_config)]) == EXIT_OK
        manifest = json.loads(
            (identity_config.parent / "out" / "manifest.json").read_text()
        )
        assert "tabsynth" in manifest["versions"]
        assert manifest["seeds"] == {"semantic": 11, "connect": 13, "synthesizer": 17}
        assert set(manifest["stages"]) == set(STAGE_ORDER)


class TestDeterminismAndIsolation:
    def test_same_config_same_bytes(self, tmp_path):
        a, b = two_children(seed=9)
        config1 = write_pipeline_inputs(tmp_path / "r1", a, b, backend="baseline")
        config2 = write_pipeline_inputs(tmp_path / "r2", a, b, backend="baseline")
        assert main(["run", "--config", str(config1)]) == EXIT_OK
        assert main(["run", "--config", str(config2)]) == EXIT_OK
        bytes1 = artifact_bytes(tmp_path / "r1" / "out")
        bytes2 = artifact_bytes(tmp_path / "r2" / "out")
        assert bytes1.keys() == bytes2.keys()
        for name in bytes1:
            assert bytes1[name] == bytes2[name], name
        # manifests agree on everything but stage timestamps
        def strip_times(node):
            if isinstance(node, dict):
                return {
                    k: strip_times(v) for k, v in node.items() if k != "completed_utc"
                }
            return node

        m1 = strip_times(json.loads((tmp_path / "r1" / "out" / "manifest.json").read_text()))
        m2 = strip_times(json.loads((tmp_path / "r2" / "out" / "manifest.json").read_text()))
        m1["config"].pop("child_a"), m2["config"].pop("child_a")  # differing input paths
        m1["config"].pop("child_b"), m2["config"].pop("child_b")
        m1["config"].pop("output_dir"), m2["config"].pop("output_dir")
        assert m1 == m2

    def test_separator_override(self, tmp_path):
        a, b = two_children(seed=4, n_subjects=6)
        config = write_pipeline_inputs(tmp_path, a, b, backend="identity")
        # rewrite the inputs with a semicolon separator
        from tabsynth.table import load_csv, write_csv

        for name, t in (("a.csv", a), ("b.csv", b)):
            write_csv(t, tmp_path / name, separator=";")
        assert main(["ingest", "--config", str(config), "--separator", ";"]) == EXIT_OK
        assert main(["ingest", "--config", str(config)]) != EXIT_OK  # comma fails now

    def test_stagewise_equals_run(self, tmp_path):
        a, b = two_children(seed=3)
        config_run = write_pipeline_inputs(tmp_path / "whole", a, b, backend="baseline")
        config_stages = write_pipeline_inputs(tmp_path / "steps", a, b, backend="baseline")
        assert main(["run", "--config", str(config_run)]) == EXIT_OK
        for stage in STAGE_ORDER:
            assert main([stage, "--config", str(config_stages)]) == EXIT_OK, stage
        whole = artifact_bytes(tmp_path / "whole" / "out")
        steps = artifact_bytes(tmp_path / "steps" / "out")
        assert whole.keys() == steps.keys()
        for name in whole:
            assert whole[name] == steps[name], name


class TestConnectOverrides:
    def test_threshold_mean_finds_planted_independent_column(self, tmp_path):
        a, b = two_children(seed=21, n_subjects=40)
        config = write_pipeline_inputs(tmp_path, a, b, backend="identity")
        for stage in ("ingest", "extract-parent", "enhance"):
            assert main([stage, "--config", str(config)]) == EXIT_OK
        assert (
            main(["connect", "--config", str(config), "--method", "threshold_mean"])
            == EXIT_OK
        )
        partition = json.loads((tmp_path / "out" / "partition.json").read_text())
        # quirk is independent by construction; snack and genre carry the
        # cross-table dependency (their enhanced labels land in core)
        assert len(partition["independent"]) == 1
        assert len(partition["core"]) == 2

    def test_fixed_threshold_override(self, tmp_path):
        a, b = two_children(seed=22, n_subjects=40)
        config = write_pipeline_inputs(tmp_path, a, b, backend="identity")
        for stage in ("ingest", "extract-parent", "enhance"):
            assert main([stage, "--config", str(config)]) == EXIT_OK
        code = main(
            [
                "connect",
                "--config",
                str(config),
                "--method",
                "threshold_fixed",
                "--threshold",
                "0.5",
            ]
        )
        assert code == EXIT_OK

    def test_hierarchical_requires_cut(self, tmp_path):
        a, b = two_children(seed=23)
        config = write_pipeline_inputs(tmp_path, a, b, method="hierarchical")
        assert main(["ingest", "--config", str(config)]) == EXIT_CONFIG


class TestErrorPaths:
    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_invalid_json_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["run", "--config", str(bad)]) == EXIT_CONFIG

    def test_missing_input_csv(self, tmp_path):
        a, b = two_children(seed=1)
        config = write_pipeline_inputs(tmp_path, a, b)
        (tmp_path / "a.csv").unlink()
        assert main(["run", "--config", str(config)]) == EXIT_CONFIG

    def test_lock_collision(self, identity_config):
        out = identity_config.parent / "out"
        out.mkdir(exist_ok=True)
        (out / "run.lock").write_text("999999")
        assert main(["run", "--config", str(identity_config)]) == EXIT_LOCK

    def test_stage_without_predecessors(self, tmp_path):
        a, b = two_children(seed=2)
        config = write_pipeline_inputs(tmp_path, a, b)
        assert main(["connect", "--config", str(config)]) != EXIT_OK


class TestCompare:
    def test_compare_two_reports(self, tmp_path, capsys):
        a, b = two_children(seed=31)
        config_i = write_pipeline_inputs(tmp_path / "i", a, b, backend="identity")
        config_s = write_pipeline_inputs(tmp_path / "s", a, b, backend="baseline")
        assert main(["run", "--config", str(config_i)]) == EXIT_OK
        assert main(["run", "--config", str(config_s)]) == EXIT_OK
        out_json = tmp_path / "cmp.json"
        code = main(
            [
                "compare",
                "--report-a",
                str(tmp_path / "i" / "out" / "fidelity_report.json"),
                "--report-b",
                str(tmp_path / "s" / "out" / "fidelity_report.json"),
                "--out",
                str(out_json),
            ]
        )
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "improved" in text and "ks_p" in text
        comparison = json.loads(out_json.read_text())
        counts = comparison["metrics"][METRIC_KS_P]
        total = counts["improved"] + counts["worsened"] + counts["unchanged"]
        assert total > 0


class TestGroupBy:
    def test_group_runs_per_value(self, tmp_path):
        from tabsynth.table import ColumnSpec, Table
        from planted import subject_spec

        rows_a, rows_b = [], []
        for g, group in enumerate(("t1", "t2")):
            for i in range(12):
                subject = f"g{g}u{i:02d}"
                tier = f"tier{i % 3}"  # contextual: constant per subject
                for r in range(2):
                    rows_a.append((subject, group, tier, f"s{(i + r) % 2}"))
                    rows_b.append((subject, group, f"v{(i + r) % 2}", f"q{r % 3}"))
        child_a = Table(
            [subject_spec(), ColumnSpec("task"), ColumnSpec("tier"), ColumnSpec("snack")],
            rows_a,
        )
        child_b = Table(
            [subject_spec(), ColumnSpec("task"), ColumnSpec("genre"), ColumnSpec("quirk")],
            rows_b,
        )
        # same payload name 'task' in both children is fine: group-by drops it
        config = write_pipeline_inputs(
            tmp_path, child_a, child_b, backend="identity", semantic_mode="none", rewrites=False
        )
        code = main(["run", "--config", str(config), "--group-by", "task"])
        assert code == EXIT_OK
        out = tmp_path / "out"
        groups = sorted(p.name for p in out.iterdir() if p.is_dir())
        assert groups == ["group_000", "group_001"]
        for g in groups:
            assert (out / g / "fidelity_report.json").exists()
