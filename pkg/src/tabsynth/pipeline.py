"""Pipeline stages and run orchestration.

Each stage reads its inputs from the run directory and persists its
outputs there, so stages can run individually or back-to-back inside
`run` with identical artifacts. Schemas of data-dependent intermediates
travel in schemas.json; the manifest records versions, seeds, dropped
rows, and the mapping-destruction record.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, codec, connect, contextual, engine, fidelity, semantic, table
from .config import PipelineConfig
from .errors import ConfigError, LockError, TabsynthError
from .table import ColumnSpec, Table

MAPPING_FILE = "mapping.txt"
SCHEMAS_FILE = "schemas.json"
MANIFEST_FILE = "manifest.json"
LOCK_FILE = "run.lock"

STAGES = (
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


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> dict:
    if not path.exists():
        raise TabsynthError(
            f"missing artifact {path.name}; run the earlier pipeline stages first"
        )
    return json.loads(path.read_text(encoding="utf-8"))


class RunDir:
    """Artifact store for one pipeline run."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    # -- tables with persisted schemas ----------------------------------

    def write_table(self, name: str, t: Table) -> None:
        table.write_csv(t, self.path(f"{name}.csv"))
        schemas = read_json(self.path(SCHEMAS_FILE)) if self.path(SCHEMAS_FILE).exists() else {}
        schemas[name] = [
            {"name": s.name, "modality": s.modality, "role": s.role} for s in t.schema
        ]
        write_json(self.path(SCHEMAS_FILE), schemas)

    def read_table(self, name: str) -> Table:
        schemas = read_json(self.path(SCHEMAS_FILE))
        if name not in schemas:
            raise TabsynthError(
                f"no schema recorded for artifact {name!r}; "
                "run the earlier pipeline stages first"
            )
        schema = [ColumnSpec(e["name"], e["modality"], e["role"]) for e in schemas[name]]
        return table.load_csv(self.path(f"{name}.csv"), schema)

    # -- manifest --------------------------------------------------------

    def init_manifest(self, config: PipelineConfig) -> None:
        manifest = {
            "versions": {
                "tabsynth": __version__,
                "python": sys.version.split()[0],
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "seeds": {
                "semantic": config.semantic.seed,
                "connect": config.connect.seed,
                "synthesizer": config.synthesizer.seed,
            },
            "config": config.echo_dict(),
            "stages": {},
        }
        write_json(self.path(MANIFEST_FILE), manifest)

    def record_stage(self, stage: str, info: dict | None = None) -> None:
        manifest = read_json(self.path(MANIFEST_FILE))
        entry = {"completed_utc": _utcnow()}
        if info:
            entry.update(info)
        manifest["stages"][stage] = entry
        write_json(self.path(MANIFEST_FILE), manifest)

    def manifest(self) -> dict:
        return read_json(self.path(MANIFEST_FILE))


class RunLock:
    """Single-flight guard on a run directory."""

    def __init__(self, root: Path):
        self.path = Path(root) / LOCK_FILE
        self._held = False

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(
                f"run directory is locked by {self.path}; another run may be in "
                "flight (delete the lock file if that run is dead)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._held = True
        return self

    def __exit__(self, *exc):
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False
        return False


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(config: PipelineConfig, run: RunDir) -> None:
    """Load and validate both child tables; persist normalized copies."""
    if not run.path(MANIFEST_FILE).exists():
        run.init_manifest(config)
    a = table.load_csv(config.child_a.path, config.child_a.schema, config.separator)
    b = table.load_csv(config.child_b.path, config.child_b.schema, config.separator)
    payload_a = {s.name for s in a.payload_specs}
    payload_b = {s.name for s in b.payload_specs}
    collisions = sorted(payload_a & payload_b)
    if collisions:
        raise ConfigError(f"child tables share payload column names: {collisions}")
    run.write_table("child_a", a)
    run.write_table("child_b", b)
    run.record_stage("ingest", {"rows_a": len(a), "rows_b": len(b)})


def stage_extract_parent(config: PipelineConfig, run: RunDir) -> None:
    """Detect contextual columns per child, extract and merge the parents."""
    a = run.read_table("child_a")
    b = run.read_table("child_b")
    m = config.contextual_threshold
    report_a = contextual.detect_contextual(a, m)
    report_b = contextual.detect_contextual(b, m)
    parent_a, residual_a = contextual.extract_parent(a, report_a.contextual_columns)
    parent_b, residual_b = contextual.extract_parent(b, report_b.contextual_columns)
    parent = contextual.merge_parents(parent_a, parent_b)
    run.write_table("parent", parent)
    run.write_table("residual_a", residual_a)
    run.write_table("residual_b", residual_b)
    write_json(
        run.path("contextual_report.json"),
        {"child_a": report_a.to_json_dict(), "child_b": report_b.to_json_dict()},
    )
    run.record_stage(
        "extract-parent",
        {
            "contextual_a": report_a.contextual_columns,
            "contextual_b": report_b.contextual_columns,
            "parent_rows": len(parent),
        },
    )


def _default_semantic_columns(tables: list[Table]) -> list[str]:
    cols = []
    for t in tables:
        for spec in t.payload_specs:
            if spec.modality == "categorical" and spec.name not in cols:
                cols.append(spec.name)
    return cols


def stage_enhance(config: PipelineConfig, run: RunDir) -> None:
    """Build and apply the mapping system and rewrite rules."""
    parent = run.read_table("parent")
    residual_a = run.read_table("residual_a")
    residual_b = run.read_table("residual_b")
    tables = [parent, residual_a, residual_b]

    info: dict = {"mode": config.semantic.mode}
    mapping = None
    if config.semantic.mode == "differentiability":
        selected = list(config.semantic.columns) or _default_semantic_columns(tables)
        pool = semantic.load_name_pool(config.semantic.name_pool)
        mapping = semantic.build_differentiability_mapping(
            tables, selected, pool, config.semantic.seed
        )
    elif config.semantic.mode == "understandability":
        text = config.semantic.mapping_file.read_text(encoding="utf-8")
        _, spec = semantic.parse_mapping_document(text)
        mapping = semantic.build_understandability_mapping(tables, spec)

    if mapping is not None:
        semantic.MappingStore(run.path(MAPPING_FILE)).save(mapping)
        info["mapped_columns"] = list(mapping.columns)
        info["total_categories"] = mapping.total_categories
        tables = [semantic.apply_mapping(t, mapping) for t in tables]

    if config.rewrites:
        tables = [semantic.apply_rewrites(t, config.rewrites) for t in tables]
        info["rewrite_rules"] = len(config.rewrites)

    run.write_table("enhanced_parent", tables[0])
    run.write_table("enhanced_a", tables[1])
    run.write_table("enhanced_b", tables[2])
    run.record_stage("enhance", info)


def stage_connect(config: PipelineConfig, run: RunDir) -> None:
    """Flatten the child tables and reduce engaged-subject bias."""
    a = run.read_table("enhanced_a")
    b = run.read_table("enhanced_b")
    flattened = table.flatten_join(a, b)
    run.write_table("flattened", flattened)

    analysis = connect.exclude_noisy_columns(flattened, config.connect.exclude)
    assoc_cols = [
        s.name for s in analysis.payload_specs if s.modality == "categorical"
    ]
    if len(assoc_cols) < 2:
        raise ConfigError(
            "connect stage needs at least two categorical payload columns to analyze"
        )
    matrix = connect.association_matrix(analysis, assoc_cols)
    matrix.write_csv(run.path("association.csv"))
    matrix.write_long_csv(run.path("association_long.csv"))

    method = config.connect.method
    if method == "threshold_mean":
        partition = connect.threshold_independent(matrix, "mean")
    elif method == "threshold_median":
        partition = connect.threshold_independent(matrix, "median")
    elif method == "threshold_fixed":
        partition = connect.threshold_independent(matrix, config.connect.threshold)
    else:
        if config.connect.cut_kind == "count":
            partition = connect.hierarchical_independent(
                matrix, cluster_count=int(config.connect.cut_value)
            )
        else:
            partition = connect.hierarchical_independent(
                matrix, distance_cut=float(config.connect.cut_value)
            )

    # excluded noisy columns re-enter the output via the bootstrap path
    removed = partition.independent_cols + tuple(config.connect.exclude)
    full = connect.IndependencePartition(
        removed, tuple(n for n in flattened.column_names
                       if n != config.subject_column and n not in removed),
        partition.method,
    )
    core, pools = connect.reduce_core(flattened, full, sources=[a, b])
    connected = connect.bootstrap_append(core, pools, config.connect.seed)

    write_json(
        run.path("partition.json"),
        {
            **partition.to_json_dict(),
            "excluded": list(config.connect.exclude),
            "removed": list(removed),
        },
    )
    write_json(run.path("pools.json"), pools.to_json_dict())
    run.write_table("connected_child", connected)
    run.record_stage(
        "connect",
        {
            "flattened_rows": len(flattened),
            "core_rows": len(core),
            "independent": list(partition.independent_cols),
            "excluded": list(config.connect.exclude),
            "method": partition.method,
        },
    )


def stage_encode(config: PipelineConfig, run: RunDir) -> None:
    """Persist textual corpora of the tables the synthesizer trains on."""
    parent = run.read_table("enhanced_parent")
    child = run.read_table("connected_child")
    sub = config.subject_column
    if parent.payload_specs:
        parent_sentences = codec.encode_table(parent.drop_columns([sub])).sentences
    else:
        # no contextual columns were found; the parent carries only IDs
        parent_sentences = ()
    child_corpus = codec.encode_table(child.drop_columns([sub]))
    run.path("corpus_parent.txt").write_text(
        "".join(s + "\n" for s in parent_sentences), encoding="utf-8"
    )
    codec.write_corpus(child_corpus, run.path("corpus_child.txt"))
    run.record_stage(
        "encode",
        {"parent_sentences": len(parent_sentences),
         "child_sentences": len(child_corpus.sentences)},
    )


def _synthesizer_config(config: PipelineConfig) -> engine.SynthesizerConfig:
    syn = config.synthesizer
    endpoint = None
    if syn.backend == "external":
        endpoint = engine.ExternalEndpoint(
            command=syn.command, host=syn.host, port=syn.port, timeout=syn.timeout
        )
    return engine.SynthesizerConfig(
        backend=syn.backend,
        epochs=syn.epochs,
        batches=syn.batches,
        sample_count=max(syn.sample_subjects, 1),
        seed=syn.seed,
        endpoint=endpoint,
    )


def stage_fit(config: PipelineConfig, run: RunDir) -> None:
    """Validate training inputs and persist the model directory.

    Builtin backends store their training tables (re-fit at sample time
    is free and keeps stages isolated). For external endpoints the
    actual training happens inside the sample stage's session, so fit
    performs a handshake check to fail fast on dead endpoints.
    """
    parent = run.read_table("enhanced_parent")
    child = run.read_table("connected_child")
    syn_config = _synthesizer_config(config)
    info: dict = {"backend": syn_config.backend}
    if syn_config.backend == "external":
        client = engine.BackendClient(syn_config.endpoint)
        try:
            client.handshake()
        finally:
            client.close()
        info["endpoint"] = syn_config.endpoint.describe()
    else:
        engine.fit(parent, child, syn_config)  # validation

    model_dir = run.path("model")
    model_dir.mkdir(exist_ok=True)
    table.write_csv(parent, model_dir / "parent.csv")
    table.write_csv(child, model_dir / "child.csv")
    write_json(
        model_dir / "model.json",
        {
            "backend": syn_config.backend,
            "epochs": syn_config.epochs,
            "batches": syn_config.batches,
            "seed": syn_config.seed,
            "parent_fingerprint": engine.schema_fingerprint(parent.schema),
            "child_fingerprint": engine.schema_fingerprint(child.schema),
        },
    )
    run.record_stage("fit", info)


def stage_sample(config: PipelineConfig, run: RunDir) -> None:
    """Fit-and-sample in one session; emit raw synthetic tables."""
    parent = run.read_table("enhanced_parent")
    child = run.read_table("connected_child")
    model_meta = read_json(run.path("model") / "model.json")
    if model_meta["parent_fingerprint"] != engine.schema_fingerprint(parent.schema):
        raise TabsynthError("model directory was fitted on a different parent schema")

    syn_config = _synthesizer_config(config)
    model = engine.fit(parent, child, syn_config)
    n_subjects = config.synthesizer.sample_subjects or len(parent)
    try:
        out = engine.sample(model, n_subjects, syn_config.seed)
    finally:
        if model.client is not None:
            model.client.close()

    run.write_table("synthetic_parent_raw", out.parent)
    run.write_table("synthetic_child_raw", out.child)
    run.record_stage(
        "sample",
        {
            "n_subjects": n_subjects,
            "parent_rows": len(out.parent),
            "child_rows": len(out.child),
            "decode_rejections": out.rejections,
        },
    )


def stage_invert(config: PipelineConfig, run: RunDir, keep_mapping: bool = False) -> None:
    """Map synthetic output back to the original data format.

    Also produces reference_child.csv: the connected child in original
    label space, the table the synthetic child is evaluated against.
    Destroys the persisted mapping afterwards unless told to keep it.
    """
    raw_parent = run.read_table("synthetic_parent_raw")
    raw_child = run.read_table("synthetic_child_raw")
    connected = run.read_table("connected_child")

    tables = {"parent": raw_parent, "child": raw_child, "reference": connected}
    if config.rewrites:
        tables = {k: semantic.reverse_rewrites(t, config.rewrites) for k, t in tables.items()}

    dropped = {"parent": 0, "child": 0, "reference": 0}
    store = semantic.MappingStore(run.path(MAPPING_FILE))
    mapping_destruction: dict = {"had_mapping": config.semantic.mode != "none"}
    if config.semantic.mode != "none":
        mapping = store.load()
        inverted = {}
        for key, t in tables.items():
            out, rejections = semantic.invert_mapping(t, mapping)
            inverted[key] = out
            dropped[key] = len(rejections)
        tables = inverted

    run.write_table("synthetic_parent", tables["parent"])
    run.write_table("synthetic_child", tables["child"])
    run.write_table("reference_child", tables["reference"])
    write_json(run.path("inversion_report.json"), {"dropped_rows": dropped})

    if config.semantic.mode != "none":
        if keep_mapping:
            mapping_destruction["destroyed"] = False
            mapping_destruction["warning"] = (
                "mapping retained on request; delete it before sharing the run "
                "directory, the label correspondence is recoverable from it"
            )
            print(f"warning: {mapping_destruction['warning']}", file=sys.stderr)
        else:
            mapping_destruction["destroyed"] = store.destroy() == "destroyed"
    run.record_stage(
        "invert", {"dropped_rows": dropped, "mapping": mapping_destruction}
    )


def stage_evaluate(config: PipelineConfig, run: RunDir) -> None:
    """Score synthetic against reference; emit the fidelity report."""
    reference = run.read_table("reference_child")
    synthetic = run.read_table("synthetic_child")
    report = fidelity.fidelity_report(
        reference,
        synthetic,
        pairs=config.evaluate.pairs,
        pool_rare_below=config.evaluate.pool_rare_below,
    )
    write_json(run.path("fidelity_report.json"), report.to_json_dict())
    fidelity.write_long_csv(report, run.path("fidelity_long.csv"))
    fidelity.write_histogram_csv(report, run.path("fidelity_hist.csv"))
    run.record_stage(
        "evaluate",
        {
            "pairs": len(report.pairs),
            "ks_p_mean": report.summaries[fidelity.METRIC_KS_P].mean,
            "w_dist_mean": report.summaries[fidelity.METRIC_W_DIST].mean,
        },
    )


STAGE_FUNCTIONS = {
    "ingest": stage_ingest,
    "extract-parent": stage_extract_parent,
    "enhance": stage_enhance,
    "connect": stage_connect,
    "encode": stage_encode,
    "fit": stage_fit,
    "sample": stage_sample,
    "invert": stage_invert,
    "evaluate": stage_evaluate,
}


def run_pipeline(config: PipelineConfig, keep_mapping: bool = False) -> RunDir:
    """Execute every stage in order inside one run-directory lock."""
    run = RunDir(config.output_dir)
    with RunLock(run.root):
        for stage in STAGES:
            if stage == "invert":
                stage_invert(config, run, keep_mapping=keep_mapping)
            else:
                STAGE_FUNCTIONS[stage](config, run)
    return run


def run_grouped(
    config: PipelineConfig, group_by: str, keep_mapping: bool = False
) -> list[tuple[str, RunDir]]:
    """Run the pipeline once per distinct value of a grouping column.

    Tables carrying the column are filtered to the group's rows and the
    column itself is dropped (it is constant within a group). A table
    without the column is restricted to the group's subjects instead.
    """
    a = table.load_csv(config.child_a.path, config.child_a.schema, config.separator)
    b = table.load_csv(config.child_b.path, config.child_b.schema, config.separator)
    carriers = [t for t in (a, b) if group_by in t.column_names]
    if not carriers:
        raise ConfigError(f"group-by column {group_by!r} not present in either child table")
    if group_by == config.subject_column:
        raise ConfigError("cannot group by the subject column")

    values: list[str] = []
    for t in carriers:
        for v in t.column_values(group_by):
            if v not in values:
                values.append(v)

    def restrict(t: Table, value: str, subjects: set[str] | None) -> Table:
        if group_by in t.column_names:
            idx = t.index_of(group_by)
            kept = [r for r in t.rows if r[idx] == value]
            return Table(t.schema, kept).drop_columns([group_by])
        sub_idx = t.index_of(config.subject_column)
        return Table(t.schema, [r for r in t.rows if r[sub_idx] in subjects])

    results = []
    for i, value in enumerate(values):
        group_subjects: set[str] = set()
        for t in carriers:
            idx = t.index_of(group_by)
            sub_idx = t.index_of(config.subject_column)
            group_subjects.update(r[sub_idx] for r in t.rows if r[idx] == value)
        ga = restrict(a, value, group_subjects)
        gb = restrict(b, value, group_subjects)
        if not ga.rows or not gb.rows:
            continue
        group_dir = Path(config.output_dir) / f"group_{i:03d}"
        group_dir.mkdir(parents=True, exist_ok=True)
        path_a = group_dir / "input_a.csv"
        path_b = group_dir / "input_b.csv"
        table.write_csv(ga, path_a)
        table.write_csv(gb, path_b)
        sub_config = dataclasses.replace(
            config,
            child_a=dataclasses.replace(config.child_a, path=path_a, schema=ga.schema),
            child_b=dataclasses.replace(config.child_b, path=path_b, schema=gb.schema),
            output_dir=group_dir,
        )
        results.append((value, run_pipeline(sub_config, keep_mapping=keep_mapping)))
    return results
