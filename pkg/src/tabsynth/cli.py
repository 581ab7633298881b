"""Command-line interface: every pipeline stage as a subcommand.

Exit codes: 0 success, 2 configuration/usage error, 3 data validation
error, 4 stage failure, 5 backend/protocol error, 6 run-directory
locked, 1 unexpected internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import fidelity, pipeline
from .config import PipelineConfig, load_config
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    LockError,
    ProtocolError,
    SchemaError,
    TabsynthError,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_STAGE = 4
EXIT_BACKEND = 5
EXIT_LOCK = 6


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabsynth",
        description=(
            "Multi-table tabular data synthesis: parent extraction, semantic "
            "label enhancement, cross-table connection, synthesis, inverse "
            "mapping, and conditional-distribution fidelity evaluation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_stage(name, help_text, extra=None):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--output-dir", help="override the config's output directory")
        p.add_argument("--separator", help="override the input CSV field separator")
        if extra:
            extra(p)
        return p

    add_stage("ingest", "load and validate the two child tables")
    add_stage("extract-parent", "detect contextual columns and extract the parent table")
    add_stage("enhance", "build and apply the semantic mapping and rewrite rules")

    def connect_opts(p):
        p.add_argument(
            "--method",
            choices=("threshold_mean", "threshold_median", "threshold_fixed", "hierarchical"),
            help="override independence method",
        )
        p.add_argument("--threshold", type=float, help="fixed threshold value")
        p.add_argument("--cut-kind", choices=("distance", "count"), help="hierarchical cut kind")
        p.add_argument("--cut-value", type=float, help="hierarchical cut value")

    add_stage("connect", "flatten child tables and reduce engaged-subject bias", connect_opts)
    add_stage("encode", "write textual corpora for the synthesizer")

    def backend_opt(p):
        p.add_argument(
            "--backend", choices=("baseline", "identity", "external"), help="override backend"
        )

    add_stage("fit", "fit the synthesizer on (parent, connected child)", backend_opt)
    add_stage("sample", "draw synthetic parent and child tables", backend_opt)

    def invert_opts(p):
        p.add_argument(
            "--keep-mapping",
            action="store_true",
            help="skip mapping destruction after inversion (warning recorded)",
        )

    add_stage("invert", "map synthetic output back to the original format", invert_opts)
    add_stage("evaluate", "score synthetic data against the training reference")

    def run_opts(p):
        invert_opts(p)
        backend_opt(p)
        p.add_argument(
            "--group-by",
            help="run the whole pipeline once per distinct value of this column",
        )

    add_stage("run", "execute the full pipeline end to end", run_opts)

    cmp = sub.add_parser("compare", help="compare two fidelity reports (improved/worsened counts)")
    cmp.add_argument("--report-a", required=True, help="fidelity_report.json of run A")
    cmp.add_argument("--report-b", required=True, help="fidelity_report.json of run B")
    cmp.add_argument("--out", help="write the comparison as JSON here")
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "output_dir", None):
        config = dataclasses.replace(config, output_dir=Path(args.output_dir))
    if getattr(args, "separator", None):
        config = dataclasses.replace(config, separator=args.separator)
    if getattr(args, "method", None):
        config = dataclasses.replace(
            config, connect=dataclasses.replace(config.connect, method=args.method)
        )
    if getattr(args, "threshold", None) is not None:
        config = dataclasses.replace(
            config, connect=dataclasses.replace(config.connect, threshold=args.threshold)
        )
    if getattr(args, "cut_kind", None):
        config = dataclasses.replace(
            config, connect=dataclasses.replace(config.connect, cut_kind=args.cut_kind)
        )
    if getattr(args, "cut_value", None) is not None:
        config = dataclasses.replace(
            config, connect=dataclasses.replace(config.connect, cut_value=args.cut_value)
        )
    if getattr(args, "backend", None):
        config = dataclasses.replace(
            config, synthesizer=dataclasses.replace(config.synthesizer, backend=args.backend)
        )
    from .config import validate_config

    validate_config(config)
    return config


def _run_command(args: argparse.Namespace) -> int:
    if args.command == "compare":
        return _compare(args)

    config = load_config(args.config)
    config = _apply_overrides(config, args)

    if args.command == "run":
        keep = getattr(args, "keep_mapping", False)
        if args.group_by:
            results = pipeline.run_grouped(config, args.group_by, keep_mapping=keep)
            for value, run in results:
                print(f"group {value!r}: {run.root}")
            print(f"{len(results)} group runs completed")
        else:
            run = pipeline.run_pipeline(config, keep_mapping=keep)
            manifest = run.manifest()
            summary = manifest["stages"].get("evaluate", {})
            print(f"run completed: {run.root}")
            if "ks_p_mean" in summary:
                print(
                    f"mean ks_p z = {summary['ks_p_mean']:.6g}, "
                    f"mean w_dist z = {summary['w_dist_mean']:.6g} "
                    f"over {summary['pairs']} pairs"
                )
        return EXIT_OK

    run = pipeline.RunDir(config.output_dir)
    with pipeline.RunLock(run.root):
        if args.command == "invert":
            pipeline.stage_invert(config, run, keep_mapping=args.keep_mapping)
        else:
            pipeline.STAGE_FUNCTIONS[args.command](config, run)
    print(f"{args.command}: done ({run.root})")
    return EXIT_OK


def _compare(args: argparse.Namespace) -> int:
    import json

    report_a = fidelity.FidelityReport.from_json_dict(
        json.loads(Path(args.report_a).read_text(encoding="utf-8"))
    )
    report_b = fidelity.FidelityReport.from_json_dict(
        json.loads(Path(args.report_b).read_text(encoding="utf-8"))
    )
    comparison = fidelity.compare_reports(report_a, report_b)
    print(fidelity.format_comparison_table(comparison))
    if args.out:
        pipeline.write_json(Path(args.out), comparison.to_json_dict())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _run_command(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError) as exc:
        print(f"data error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BackendError, ProtocolError) as exc:
        print(f"backend error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except LockError as exc:
        print(f"lock error: {exc}", file=sys.stderr)
        return EXIT_LOCK
    except TabsynthError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error [{args.command}]: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())
