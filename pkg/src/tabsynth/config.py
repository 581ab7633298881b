"""Declarative pipeline configuration.

One JSON document drives a full run. Every stochastic stage takes an
explicit seed key (constant defaults, never wall-clock), so identical
configs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError
from .semantic import RewriteRule
from .table import ColumnSpec

SEMANTIC_MODES = ("none", "differentiability", "understandability")
CONNECT_METHODS = (
    "threshold_mean",
    "threshold_median",
    "threshold_fixed",
    "hierarchical",
)


@dataclass(frozen=True)
class TableSource:
    path: Path
    schema: tuple[ColumnSpec, ...]


@dataclass(frozen=True)
class SemanticSettings:
    mode: str = "none"
    columns: tuple[str, ...] = ()  # empty = all categorical payload columns
    seed: int = 0
    name_pool: Path | None = None
    mapping_file: Path | None = None


@dataclass(frozen=True)
class ConnectSettings:
    exclude: tuple[str, ...] = ()
    method: str = "threshold_mean"
    threshold: float | None = None  # threshold_fixed only
    cut_kind: str | None = None  # "distance" | "count", hierarchical only
    cut_value: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class SynthesizerSettings:
    backend: str = "baseline"
    epochs: int = 10
    batches: int = 5
    sample_subjects: int = 0  # 0 = as many as the training parent has
    seed: int = 0
    command: tuple[str, ...] | None = None
    host: str | None = None
    port: int | None = None
    timeout: float = 120.0


@dataclass(frozen=True)
class EvaluateSettings:
    pairs: tuple[tuple[str, str], ...] | None = None  # None = all payload pairs
    pool_rare_below: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    child_a: TableSource
    child_b: TableSource
    subject_column: str
    output_dir: Path
    separator: str = ","
    contextual_threshold: float = 0.98
    semantic: SemanticSettings = SemanticSettings()
    rewrites: tuple[RewriteRule, ...] = ()
    connect: ConnectSettings = ConnectSettings()
    synthesizer: SynthesizerSettings = SynthesizerSettings()
    evaluate: EvaluateSettings = EvaluateSettings()

    def echo_dict(self) -> dict:
        """Config as written to the run manifest."""

        def specs(schema):
            return [
                {"name": s.name, "modality": s.modality, "role": s.role} for s in schema
            ]

        return {
            "child_a": {"path": str(self.child_a.path), "schema": specs(self.child_a.schema)},
            "child_b": {"path": str(self.child_b.path), "schema": specs(self.child_b.schema)},
            "subject_column": self.subject_column,
            "separator": self.separator,
            "contextual_threshold": self.contextual_threshold,
            "semantic": {
                "mode": self.semantic.mode,
                "columns": list(self.semantic.columns),
                "seed": self.semantic.seed,
                "name_pool": str(self.semantic.name_pool) if self.semantic.name_pool else None,
                "mapping_file": str(self.semantic.mapping_file)
                if self.semantic.mapping_file
                else None,
            },
            "rewrites": [
                {
                    "pattern": r.pattern,
                    "replacement": r.replacement,
                    "columns": list(r.columns) if r.columns is not None else None,
                }
                for r in self.rewrites
            ],
            "connect": {
                "exclude": list(self.connect.exclude),
                "method": self.connect.method,
                "threshold": self.connect.threshold,
                "cut_kind": self.connect.cut_kind,
                "cut_value": self.connect.cut_value,
                "seed": self.connect.seed,
            },
            "synthesizer": {
                "backend": self.synthesizer.backend,
                "epochs": self.synthesizer.epochs,
                "batches": self.synthesizer.batches,
                "sample_subjects": self.synthesizer.sample_subjects,
                "seed": self.synthesizer.seed,
                "command": list(self.synthesizer.command)
                if self.synthesizer.command
                else None,
                "host": self.synthesizer.host,
                "port": self.synthesizer.port,
                "timeout": self.synthesizer.timeout,
            },
            "evaluate": {
                "pairs": [list(p) for p in self.evaluate.pairs]
                if self.evaluate.pairs is not None
                else None,
                "pool_rare_below": self.evaluate.pool_rare_below,
            },
            "output_dir": str(self.output_dir),
        }


def _parse_schema(entries, where: str) -> tuple[ColumnSpec, ...]:
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{where}: 'columns' must be a non-empty list")
    specs = []
    for e in entries:
        try:
            specs.append(
                ColumnSpec(
                    e["name"],
                    e.get("modality", "categorical"),
                    e.get("role", "payload"),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{where}: bad column entry {e!r}") from exc
    return tuple(specs)


def _parse_table_source(data, where: str, base: Path) -> TableSource:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object with path and columns")
    try:
        path = Path(data["path"])
    except KeyError:
        raise ConfigError(f"{where}: missing 'path'") from None
    if not path.is_absolute():
        path = base / path
    return TableSource(path, _parse_schema(data.get("columns"), where))


def _seed(value, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ConfigError(f"{where}: seed must be a non-negative integer, got {value!r}")
    return value


def _resolve(base: Path, value) -> Path | None:
    if not value:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path) -> PipelineConfig:
    """Load and validate a pipeline config document."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    base = path.parent

    for key in ("child_a", "child_b", "subject_column", "output_dir"):
        if key not in data:
            raise ConfigError(f"{path}: missing required key {key!r}")

    child_a = _parse_table_source(data["child_a"], "child_a", base)
    child_b = _parse_table_source(data["child_b"], "child_b", base)
    subject = data["subject_column"]

    sem_data = data.get("semantic", {})
    semantic = SemanticSettings(
        mode=sem_data.get("mode", "none"),
        columns=tuple(sem_data.get("columns", ())),
        seed=_seed(sem_data.get("seed", 0), "semantic"),
        name_pool=_resolve(base, sem_data.get("name_pool")),
        mapping_file=_resolve(base, sem_data.get("mapping_file")),
    )

    rewrites = []
    for i, r in enumerate(data.get("rewrites", ())):
        try:
            rewrites.append(
                RewriteRule(
                    r["pattern"],
                    r["replacement"],
                    tuple(r["columns"]) if r.get("columns") is not None else None,
                )
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"rewrites[{i}]: bad rule {r!r}") from exc

    con_data = data.get("connect", {})
    connect = ConnectSettings(
        exclude=tuple(con_data.get("exclude", ())),
        method=con_data.get("method", "threshold_mean"),
        threshold=con_data.get("threshold"),
        cut_kind=con_data.get("cut_kind"),
        cut_value=con_data.get("cut_value"),
        seed=_seed(con_data.get("seed", 0), "connect"),
    )

    syn_data = data.get("synthesizer", {})
    endpoint = syn_data.get("endpoint", {})
    synthesizer = SynthesizerSettings(
        backend=syn_data.get("backend", "baseline"),
        epochs=syn_data.get("epochs", 10),
        batches=syn_data.get("batches", 5),
        sample_subjects=syn_data.get("sample_subjects", 0),
        seed=_seed(syn_data.get("seed", 0), "synthesizer"),
        command=tuple(endpoint["command"]) if endpoint.get("command") else None,
        host=endpoint.get("host"),
        port=endpoint.get("port"),
        timeout=endpoint.get("timeout", 120.0),
    )

    eval_data = data.get("evaluate", {})
    pairs = eval_data.get("pairs")
    evaluate = EvaluateSettings(
        pairs=tuple((p[0], p[1]) for p in pairs) if pairs is not None else None,
        pool_rare_below=eval_data.get("pool_rare_below", 0),
    )

    out_dir = Path(data["output_dir"])
    if not out_dir.is_absolute():
        out_dir = base / out_dir

    config = PipelineConfig(
        child_a=child_a,
        child_b=child_b,
        subject_column=subject,
        output_dir=out_dir,
        separator=data.get("separator", ","),
        contextual_threshold=data.get("contextual_threshold", 0.98),
        semantic=semantic,
        rewrites=tuple(rewrites),
        connect=connect,
        synthesizer=synthesizer,
        evaluate=evaluate,
    )
    validate_config(config)
    return config


def validate_config(config: PipelineConfig) -> None:
    for name, source in (("child_a", config.child_a), ("child_b", config.child_b)):
        if not source.path.exists():
            raise ConfigError(f"{name}: input file not found: {source.path}")
        subject_specs = [s for s in source.schema if s.role == "subject_id"]
        if len(subject_specs) != 1:
            raise ConfigError(
                f"{name}: schema must declare exactly one subject_id column, "
                f"found {len(subject_specs)}"
            )
        if subject_specs[0].name != config.subject_column:
            raise ConfigError(
                f"{name}: subject_id column {subject_specs[0].name!r} does not "
                f"match subject_column {config.subject_column!r}"
            )

    if not 0 < config.contextual_threshold <= 1:
        raise ConfigError(
            f"contextual_threshold must be in (0, 1], got {config.contextual_threshold}"
        )

    sem = config.semantic
    if sem.mode not in SEMANTIC_MODES:
        raise ConfigError(f"semantic.mode must be one of {SEMANTIC_MODES}, got {sem.mode!r}")
    if sem.mode == "understandability":
        if sem.mapping_file is None:
            raise ConfigError("semantic.mode understandability requires semantic.mapping_file")
        if not sem.mapping_file.exists():
            raise ConfigError(f"semantic.mapping_file not found: {sem.mapping_file}")
    if sem.name_pool is not None and not sem.name_pool.exists():
        raise ConfigError(f"semantic.name_pool not found: {sem.name_pool}")

    con = config.connect
    if con.method not in CONNECT_METHODS:
        raise ConfigError(f"connect.method must be one of {CONNECT_METHODS}, got {con.method!r}")
    if con.method == "threshold_fixed":
        if con.threshold is None:
            raise ConfigError("connect.method threshold_fixed requires connect.threshold")
        if not 0 <= con.threshold <= 1:
            raise ConfigError(f"connect.threshold must be in [0, 1], got {con.threshold}")
    if con.method == "hierarchical":
        # the tuning is data-dependent, so pipeline runs must pin the cut
        if con.cut_kind not in ("distance", "count"):
            raise ConfigError(
                "connect.method hierarchical requires connect.cut_kind of 'distance' or 'count'"
            )
        if con.cut_value is None:
            raise ConfigError("connect.method hierarchical requires connect.cut_value")

    syn = config.synthesizer
    if syn.backend not in ("baseline", "identity", "external"):
        raise ConfigError(f"unknown synthesizer.backend {syn.backend!r}")
    if syn.backend == "external" and syn.command is None and syn.host is None:
        raise ConfigError(
            "synthesizer.backend external requires endpoint.command or endpoint.host/port"
        )
    if syn.epochs < 1 or syn.batches < 1:
        raise ConfigError("synthesizer.epochs and synthesizer.batches must be >= 1")
    if syn.sample_subjects < 0:
        raise ConfigError("synthesizer.sample_subjects must be >= 0")

    if config.evaluate.pool_rare_below < 0:
        raise ConfigError("evaluate.pool_rare_below must be >= 0")


def with_output_dir(config: PipelineConfig, out_dir: Path) -> PipelineConfig:
    return replace(config, output_dir=out_dir)
