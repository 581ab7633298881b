"""Pluggable synthesizer over (parent, child) table pairs.

Backends:

* baseline — per-subject bootstrap sampler. Parent rows are drawn with
  replacement and given fresh synthetic subject IDs; each synthetic
  subject's child rows are drawn with replacement from its source
  subject's rows only, so rows are never mixed across subjects. Simple
  by design: an oracle-friendly stand-in that exercises every pipeline
  stage without any ML dependency.
* identity — replays the training tables (up to subject-ID relabeling);
  the evaluator's fixed point.
* external — speaks the line-delimited wire protocol to a language-model
  backend over a subprocess's standard streams or a local TCP socket.
"""

from __future__ import annotations

import hashlib
import os
import selectors
import socket
import subprocess
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import codec, protocol
from .errors import BackendError, DataError, ProtocolError, SchemaError
from .table import ColumnSpec, Table, build_subject_index, validate_one_row_per_subject

BACKENDS = ("baseline", "identity", "external")


@dataclass(frozen=True)
class ExternalEndpoint:
    """Where an external backend lives: a command to spawn, or host:port."""

    command: tuple[str, ...] | None = None
    host: str | None = None
    port: int | None = None
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if (self.command is None) == (self.host is None):
            raise SchemaError("endpoint needs exactly one of command or host/port")
        if self.host is not None and self.port is None:
            raise SchemaError("socket endpoint needs a port")

    def describe(self) -> str:
        if self.command is not None:
            return " ".join(self.command)
        return f"{self.host}:{self.port}"


@dataclass(frozen=True)
class SynthesizerConfig:
    backend: str = "baseline"
    epochs: int = 10
    batches: int = 5
    sample_count: int = 1
    seed: int = 0
    endpoint: ExternalEndpoint | None = None

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise SchemaError(f"unknown backend {self.backend!r} (expected one of {BACKENDS})")
        if self.epochs < 1 or self.batches < 1 or self.sample_count < 1:
            raise SchemaError("epochs, batches, and sample_count must all be >= 1")
        if self.seed < 0:
            raise SchemaError("seed must be non-negative")
        if self.backend == "external" and self.endpoint is None:
            raise SchemaError("external backend requires an endpoint")


def schema_fingerprint(schema: Sequence[ColumnSpec]) -> str:
    text = ";".join(f"{s.name}|{s.modality}|{s.role}" for s in schema)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class TrainedModel:
    backend: str
    config: SynthesizerConfig
    parent: Table
    child: Table
    parent_fingerprint: str
    child_fingerprint: str
    # external backend only:
    client: "BackendClient | None" = None
    model_id: str | None = None


@dataclass
class SampleOutput:
    parent: Table
    child: Table
    rejections: dict[str, int] = field(default_factory=dict)


def _synthetic_id(i: int) -> str:
    return f"syn-{i + 1:06d}"


def fit(parent: Table, child: Table, config: SynthesizerConfig) -> TrainedModel:
    """Fit a synthesizer on a one-row-per-subject parent and its child."""
    ps, cs = parent.subject_spec, child.subject_spec
    if ps is None or cs is None:
        raise SchemaError("fit requires subject_id columns on parent and child")
    if ps.name != cs.name:
        raise SchemaError(f"subject column name mismatch: {ps.name!r} vs {cs.name!r}")
    validate_one_row_per_subject(parent)
    parent_subjects = set(parent.subject_values())
    orphans = sorted(set(child.subject_values()) - parent_subjects)
    if orphans:
        raise DataError(
            f"child subjects absent from parent (first few: {orphans[:5]})"
        )

    model = TrainedModel(
        backend=config.backend,
        config=config,
        parent=parent,
        child=child,
        parent_fingerprint=schema_fingerprint(parent.schema),
        child_fingerprint=schema_fingerprint(child.schema),
    )
    if config.backend == "external":
        if not parent.payload_specs or not child.payload_specs:
            raise SchemaError(
                "external backend needs at least one payload column on parent and child"
            )
        client = BackendClient(config.endpoint)
        client.handshake()
        parent_corpus = codec.encode_table(parent.drop_columns([ps.name]))
        parent_sentence_by_subject = dict(zip(parent.subject_values(), parent_corpus.sentences))
        child_payload = child.drop_columns([cs.name])
        child_corpus = []
        for subject, row in zip(child.subject_values(), child_payload.rows):
            child_corpus.append(
                {
                    "conditioning": parent_sentence_by_subject[subject],
                    "sentence": codec.encode_row(row, child_payload.schema),
                }
            )
        record = protocol.train_record(
            parent_payload_schema(parent),
            child_payload_schema(child),
            parent_corpus.sentences,
            child_corpus,
            config.epochs,
            config.batches,
            config.seed,
        )
        reply = client.request(record)
        if reply["type"] == "error":
            raise BackendError(
                f"backend {config.endpoint.describe()} rejected train: {reply['message']}"
            )
        if reply["type"] != "ack":
            raise ProtocolError(f"expected ack after train, got {reply['type']!r}")
        model.client = client
        model.model_id = reply["model_id"]
    return model


def parent_payload_schema(parent: Table) -> tuple[ColumnSpec, ...]:
    return parent.payload_specs


def child_payload_schema(child: Table) -> tuple[ColumnSpec, ...]:
    return child.payload_specs


def sample(model: TrainedModel, n_subjects: int, seed: int) -> SampleOutput:
    """Draw synthetic (parent, child) tables from a fitted model."""
    if n_subjects < 1:
        raise SchemaError("n_subjects must be >= 1")
    if model.backend == "identity":
        out = _sample_identity(model)
    elif model.backend == "baseline":
        out = _sample_baseline(model, n_subjects, seed)
    else:
        out = _sample_external(model, n_subjects, seed)
    if schema_fingerprint(out.parent.schema) != model.parent_fingerprint:
        raise SchemaError("synthetic parent schema drifted from the fitted schema")
    if schema_fingerprint(out.child.schema) != model.child_fingerprint:
        raise SchemaError("synthetic child schema drifted from the fitted schema")
    return out


def _sample_identity(model: TrainedModel) -> SampleOutput:
    # Replay contract: training tables, fresh subject labels.
    sub = model.parent.subject_spec.name
    relabel = {
        subject: _synthetic_id(i)
        for i, subject in enumerate(model.parent.subject_values())
    }
    p_idx = model.parent.index_of(sub)
    c_idx = model.child.index_of(sub)
    parent_rows = [
        row[:p_idx] + (relabel[row[p_idx]],) + row[p_idx + 1 :]
        for row in model.parent.rows
    ]
    child_rows = [
        row[:c_idx] + (relabel[row[c_idx]],) + row[c_idx + 1 :]
        for row in model.child.rows
    ]
    return SampleOutput(
        Table(model.parent.schema, parent_rows),
        Table(model.child.schema, child_rows),
    )


def _sample_baseline(model: TrainedModel, n_subjects: int, seed: int) -> SampleOutput:
    sub = model.parent.subject_spec.name
    p_idx = model.parent.index_of(sub)
    c_idx = model.child.index_of(sub)
    child_by_subject = build_subject_index(model.child)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    source_rows = rng.integers(0, len(model.parent.rows), size=n_subjects)

    parent_rows = []
    child_rows = []
    for i, src in enumerate(source_rows):
        syn_id = _synthetic_id(i)
        src_row = model.parent.rows[int(src)]
        parent_rows.append(src_row[:p_idx] + (syn_id,) + src_row[p_idx + 1 :])
        source_subject = src_row[p_idx]
        src_child_ids = child_by_subject.get(source_subject, [])
        if src_child_ids:
            draws = rng.integers(0, len(src_child_ids), size=len(src_child_ids))
            for d in draws:
                row = model.child.rows[src_child_ids[int(d)]]
                child_rows.append(row[:c_idx] + (syn_id,) + row[c_idx + 1 :])
    return SampleOutput(
        Table(model.parent.schema, parent_rows),
        Table(model.child.schema, child_rows),
    )


def _sample_external(model: TrainedModel, n_subjects: int, seed: int) -> SampleOutput:
    if model.client is None or model.model_id is None:
        raise BackendError("external model has no live backend session (unfitted?)")
    sub = model.parent.subject_spec.name
    parent_payload = model.parent.drop_columns([sub])
    child_payload = model.child.drop_columns([sub])

    client = model.client
    client.send(protocol.sample_record(model.model_id, n_subjects, seed))
    parent_sentences: dict[int, str] = {}
    child_sentences: list[tuple[int, str]] = []
    counts: dict | None = None
    while True:
        record = client.recv()
        if record["type"] == "sentence":
            if record["table"] == "parent":
                parent_sentences[int(record["index"])] = record["text"]
            elif record["table"] == "child":
                child_sentences.append((int(record["parent_index"]), record["text"]))
            else:
                raise ProtocolError(f"unknown sentence table {record['table']!r}")
        elif record["type"] == "done":
            counts = record["counts"]
            break
        elif record["type"] == "error":
            raise BackendError(
                f"backend {model.config.endpoint.describe()} failed sample: {record['message']}"
            )
        else:
            raise ProtocolError(f"unexpected {record['type']!r} record during sampling")

    if counts is not None:
        if counts.get("parent") != len(parent_sentences) or counts.get("child") != len(
            child_sentences
        ):
            raise ProtocolError(
                "backend done counts disagree with streamed records: "
                f"{counts} vs parent={len(parent_sentences)} child={len(child_sentences)}"
            )

    rejections: dict[str, int] = {}
    parent_rows = []
    syn_id_by_index: dict[int, str] = {}
    p_idx = model.parent.index_of(sub)
    for index in sorted(parent_sentences):
        try:
            cells = codec.decode_sentence(parent_sentences[index], parent_payload.schema)
            Table(parent_payload.schema, [cells])
        except codec.SentenceRejection as rej:
            rejections[rej.reason] = rejections.get(rej.reason, 0) + 1
            continue
        except DataError:
            rejections[codec.REASON_INVALID_CELL] = (
                rejections.get(codec.REASON_INVALID_CELL, 0) + 1
            )
            continue
        syn_id = _synthetic_id(len(parent_rows))
        syn_id_by_index[index] = syn_id
        parent_rows.append(cells[:p_idx] + (syn_id,) + cells[p_idx:])

    c_idx = model.child.index_of(sub)
    child_rows = []
    dropped_orphans = 0
    for parent_index, text in child_sentences:
        syn_id = syn_id_by_index.get(parent_index)
        if syn_id is None:
            dropped_orphans += 1
            continue
        try:
            cells = codec.decode_sentence(text, child_payload.schema)
            Table(child_payload.schema, [cells])
        except codec.SentenceRejection as rej:
            rejections[rej.reason] = rejections.get(rej.reason, 0) + 1
            continue
        except DataError:
            rejections[codec.REASON_INVALID_CELL] = (
                rejections.get(codec.REASON_INVALID_CELL, 0) + 1
            )
            continue
        child_rows.append(cells[:c_idx] + (syn_id,) + cells[c_idx:])
    if dropped_orphans:
        rejections["orphaned_child"] = dropped_orphans

    return SampleOutput(
        Table(model.parent.schema, parent_rows),
        Table(model.child.schema, child_rows),
        rejections,
    )


class BackendClient:
    """Protocol client over a spawned subprocess or a local TCP socket.

    Enforces request/response alternation; one in-flight call at a time.
    """

    def __init__(self, endpoint: ExternalEndpoint):
        self.endpoint = endpoint
        self._proc: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        self._sock_file = None
        self._buffer = b""
        if endpoint.command is not None:
            try:
                self._proc = subprocess.Popen(
                    endpoint.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=False,
                )
            except OSError as exc:
                raise BackendError(
                    f"cannot spawn backend {endpoint.describe()!r}: {exc}"
                ) from exc
        else:
            try:
                self._sock = socket.create_connection(
                    (endpoint.host, endpoint.port), timeout=endpoint.timeout
                )
            except OSError as exc:
                raise BackendError(
                    f"cannot connect to backend {endpoint.describe()}: {exc}"
                ) from exc

    def handshake(self) -> dict:
        reply = self.request(protocol.hello_record())
        if reply["type"] == "error":
            raise BackendError(
                f"backend {self.endpoint.describe()} refused handshake: {reply['message']}"
            )
        if reply["type"] != "hello":
            raise ProtocolError(f"expected hello reply, got {reply['type']!r}")
        if reply["protocol_version"] != protocol.PROTOCOL_VERSION:
            raise ProtocolError(
                f"backend {self.endpoint.describe()} speaks protocol "
                f"{reply['protocol_version']!r}, this client speaks "
                f"{protocol.PROTOCOL_VERSION!r}; aborting"
            )
        return reply

    def request(self, record: dict) -> dict:
        self.send(record)
        return self.recv()

    def send(self, record: dict) -> None:
        line = protocol.encode_record(record) + "\n"
        data = line.encode("utf-8")
        try:
            if self._proc is not None:
                if self._proc.poll() is not None:
                    raise BackendError(
                        f"backend {self.endpoint.describe()} exited "
                        f"with code {self._proc.returncode}"
                    )
                self._proc.stdin.write(data)
                self._proc.stdin.flush()
            else:
                self._sock.sendall(data)
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(
                f"backend {self.endpoint.describe()} went away mid-send: {exc}"
            ) from exc

    def recv(self) -> dict:
        line = self._read_line()
        return protocol.parse_record(line)

    def _read_line(self) -> str:
        deadline = time.monotonic() + self.endpoint.timeout
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendError(
                    f"backend {self.endpoint.describe()} timed out after "
                    f"{self.endpoint.timeout}s waiting for a record"
                )
            chunk = self._read_chunk(remaining)
            if chunk == b"":
                raise BackendError(
                    f"backend {self.endpoint.describe()} closed the stream mid-session"
                )
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    def _read_chunk(self, timeout: float) -> bytes:
        if self._proc is not None:
            sel = selectors.DefaultSelector()
            sel.register(self._proc.stdout, selectors.EVENT_READ)
            ready = sel.select(timeout)
            sel.close()
            if not ready:
                if self._proc.poll() is not None:
                    return b""
                raise BackendError(
                    f"backend {self.endpoint.describe()} timed out after "
                    f"{self.endpoint.timeout}s waiting for a record"
                )
            return os.read(self._proc.stdout.fileno(), 65536)
        else:
            self._sock.settimeout(timeout)
            try:
                return self._sock.recv(65536)
            except socket.timeout:
                raise BackendError(
                    f"backend {self.endpoint.describe()} timed out after "
                    f"{self.endpoint.timeout}s waiting for a record"
                ) from None

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._sock is not None:
            self._sock.close()
