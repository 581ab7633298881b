"""Wire protocol for external synthesizer backends.

Line-delimited JSON records over standard streams or a local TCP
socket, one record per line, UTF-8. Session shape:

    client: hello{protocol_version}
    server: hello{protocol_version}          (version mismatch aborts)
    client: train{parent_schema, child_schema, parent_corpus,
                  child_corpus, epochs, batches, seed}
    server: ack{model_id} | error{...}
    client: sample{model_id, n_subjects, seed}
    server: sentence{table, index|parent_index, text} ...
            done{counts} | error{...}

Child corpus entries carry the subject's parent sentence as a
conditioning prefix field; subject IDs never travel over the wire.
"""

from __future__ import annotations

import json
from typing import Iterable, Mapping, Sequence

from .errors import ProtocolError
from .table import ColumnSpec

PROTOCOL_VERSION = "1"

_REQUIRED_FIELDS: dict[str, tuple[str, ...]] = {
    "hello": ("protocol_version",),
    "train": (
        "parent_schema",
        "child_schema",
        "parent_corpus",
        "child_corpus",
        "epochs",
        "batches",
        "seed",
    ),
    "ack": ("model_id",),
    "sample": ("model_id", "n_subjects", "seed"),
    "sentence": ("table", "text"),
    "done": ("counts",),
    "error": ("code", "message"),
}

CLIENT_TYPES = ("hello", "train", "sample")
SERVER_TYPES = ("hello", "ack", "sentence", "done", "error")


def encode_record(record: Mapping) -> str:
    """One compact JSON object per line."""
    rtype = record.get("type")
    if rtype not in _REQUIRED_FIELDS:
        raise ProtocolError(f"cannot encode record of unknown type {rtype!r}")
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


def parse_record(line: str) -> dict:
    """Parse and validate one record line."""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"record is not valid JSON: {line[:80]!r}") from exc
    if not isinstance(record, dict):
        raise ProtocolError(f"record must be a JSON object, got: {line[:80]!r}")
    rtype = record.get("type")
    if rtype not in _REQUIRED_FIELDS:
        raise ProtocolError(f"unknown record type {rtype!r}")
    missing = [f for f in _REQUIRED_FIELDS[rtype] if f not in record]
    if missing:
        raise ProtocolError(f"{rtype} record missing fields {missing}")
    if rtype == "sentence":
        if record["table"] == "parent" and "index" not in record:
            raise ProtocolError("parent sentence record missing 'index'")
        if record["table"] == "child" and "parent_index" not in record:
            raise ProtocolError("child sentence record missing 'parent_index'")
    return record


def schema_to_wire(schema: Sequence[ColumnSpec]) -> list[dict]:
    return [{"name": s.name, "modality": s.modality} for s in schema]


def hello_record() -> dict:
    return {"type": "hello", "protocol_version": PROTOCOL_VERSION}


def train_record(
    parent_schema: Sequence[ColumnSpec],
    child_schema: Sequence[ColumnSpec],
    parent_corpus: Sequence[str],
    child_corpus: Sequence[dict],
    epochs: int,
    batches: int,
    seed: int,
) -> dict:
    return {
        "type": "train",
        "parent_schema": schema_to_wire(parent_schema),
        "child_schema": schema_to_wire(child_schema),
        "parent_corpus": list(parent_corpus),
        "child_corpus": list(child_corpus),
        "epochs": epochs,
        "batches": batches,
        "seed": seed,
    }


def sample_record(model_id: str, n_subjects: int, seed: int) -> dict:
    return {"type": "sample", "model_id": model_id, "n_subjects": n_subjects, "seed": seed}


def validate_transcript(events: Iterable[tuple[str, dict]]) -> None:
    """Check a recorded session against the protocol grammar.

    `events` is a sequence of (direction, record) with direction
    "client" or "server". Raises ProtocolError naming the offending
    event index.
    """
    state = "want_client_hello"
    for pos, (direction, record) in enumerate(events):
        rtype = record.get("type")

        def fail(msg: str) -> None:
            raise ProtocolError(f"event {pos} ({direction} {rtype}): {msg}")

        if direction == "client" and rtype not in CLIENT_TYPES:
            fail("not a client record type")
        if direction == "server" and rtype not in SERVER_TYPES:
            fail("not a server record type")
        missing = [f for f in _REQUIRED_FIELDS.get(rtype, ()) if f not in record]
        if missing:
            fail(f"missing fields {missing}")

        if state == "want_client_hello":
            if direction != "client" or rtype != "hello":
                fail("session must open with a client hello")
            state = "want_server_hello"
        elif state == "want_server_hello":
            if direction != "server" or rtype not in ("hello", "error"):
                fail("expected server hello (or error) after client hello")
            if rtype == "hello" and record["protocol_version"] != PROTOCOL_VERSION:
                fail(
                    f"protocol version mismatch: {record['protocol_version']!r} "
                    f"!= {PROTOCOL_VERSION!r}"
                )
            state = "idle" if rtype == "hello" else "aborted"
        elif state == "idle":
            if direction != "client":
                fail("expected a client request")
            if rtype == "train":
                state = "want_ack"
            elif rtype == "sample":
                state = "streaming"
            else:
                fail("expected train or sample")
        elif state == "want_ack":
            if direction != "server" or rtype not in ("ack", "error"):
                fail("expected server ack (or error) after train")
            state = "idle"
        elif state == "streaming":
            if direction != "server":
                fail("client record while server is streaming samples")
            if rtype == "sentence":
                pass
            elif rtype in ("done", "error"):
                state = "idle"
            else:
                fail("expected sentence, done, or error during sampling")
        elif state == "aborted":
            fail("record after session abort")
    if state not in ("idle", "aborted"):
        raise ProtocolError(f"transcript ended mid-exchange (state {state})")
