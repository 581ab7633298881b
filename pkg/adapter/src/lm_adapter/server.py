"""Wire-protocol session: hello/train/sample over stdio or a TCP socket.

One JSON record per line. Every incoming record gets a response: bad
lines and unknown commands produce error records (with the offending
line echoed), never silence. A version mismatch at hello aborts the
session after the error record is sent.
"""

from __future__ import annotations

import copy
import json
import socket
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import model as lm

PROTOCOL_VERSION = "1"


@dataclass
class ServerSettings:
    model_dir: Path
    temperature: float = 0.45
    top_k: int = 15
    max_new_tokens: int = 200
    children_per_parent: int = 0  # 0 = average children per parent in training
    transcript: Path | None = None


@dataclass
class FittedPair:
    parent_model: "torch.nn.Module"
    child_model: "torch.nn.Module"
    children_per_parent: int


class AdapterSession:
    """Sequential request handler around locally pretrained weights."""

    def __init__(self, settings: ServerSettings):
        self.settings = settings
        self.base = lm.load_pretrained(settings.model_dir)
        self.models: dict[str, FittedPair] = {}
        self.next_id = 1
        self._transcript_fh = (
            settings.transcript.open("w", encoding="utf-8")
            if settings.transcript
            else None
        )

    # -- transcript -------------------------------------------------------

    def _record(self, direction: str, record: dict) -> None:
        if self._transcript_fh is not None:
            self._transcript_fh.write(
                json.dumps({"dir": direction, "record": record}) + "\n"
            )
            self._transcript_fh.flush()

    # -- request handling --------------------------------------------------

    def handle_line(self, line: str) -> tuple[list[dict], bool]:
        """Returns (response records, keep_session_alive)."""
        line = line.strip()
        if not line:
            return [], True
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("not an object")
        except ValueError:
            err = {
                "type": "error",
                "code": "malformed_record",
                "message": "line is not a JSON object",
                "echo": line[:200],
            }
            self._record("server", err)
            return [err], True

        self._record("client", record)
        rtype = record.get("type")
        if rtype == "hello":
            return self._hello(record)
        if rtype == "train":
            return self._train(record)
        if rtype == "sample":
            return self._sample(record)
        err = {
            "type": "error",
            "code": "unknown_command",
            "message": f"unknown record type {rtype!r}",
            "echo": line[:200],
        }
        self._record("server", err)
        return [err], True

    def _reply(self, record: dict) -> dict:
        self._record("server", record)
        return record

    def _hello(self, record: dict) -> tuple[list[dict], bool]:
        version = record.get("protocol_version")
        if version != PROTOCOL_VERSION:
            err = self._reply(
                {
                    "type": "error",
                    "code": "version_mismatch",
                    "message": (
                        f"server speaks protocol {PROTOCOL_VERSION!r}, "
                        f"client sent {version!r}; aborting"
                    ),
                }
            )
            return [err], False
        return [
            self._reply(
                {
                    "type": "hello",
                    "protocol_version": PROTOCOL_VERSION,
                    "backend": "lm-adapter",
                }
            )
        ], True

    def _train(self, record: dict) -> tuple[list[dict], bool]:
        for key in ("parent_corpus", "child_corpus", "epochs", "batches", "seed"):
            if key not in record:
                return [
                    self._reply(
                        {
                            "type": "error",
                            "code": "malformed_record",
                            "message": f"train record missing {key!r}",
                        }
                    )
                ], True
        parent_corpus = record["parent_corpus"]
        child_corpus = record["child_corpus"]
        if not parent_corpus or not child_corpus:
            return [
                self._reply(
                    {
                        "type": "error",
                        "code": "empty_corpus",
                        "message": "train needs non-empty parent and child corpora",
                    }
                )
            ], True
        epochs = int(record["epochs"])
        batch_size = max(int(record["batches"]), 1)
        seed = int(record["seed"])

        parent_model = copy.deepcopy(self.base)
        lm.train_model(
            parent_model,
            [lm.parent_sequence(s) for s in parent_corpus],
            epochs=epochs,
            batch_size=batch_size,
            seed=seed,
        )
        child_model = copy.deepcopy(self.base)
        lm.train_model(
            child_model,
            [
                lm.child_sequence(entry.get("conditioning"), entry["sentence"])
                for entry in child_corpus
            ],
            epochs=epochs,
            batch_size=batch_size,
            seed=seed + 1,
        )

        k = self.settings.children_per_parent or max(
            1, round(len(child_corpus) / len(parent_corpus))
        )
        model_id = f"m-{self.next_id}"
        self.next_id += 1
        self.models[model_id] = FittedPair(parent_model, child_model, k)
        return [self._reply({"type": "ack", "model_id": model_id})], True

    def _sample(self, record: dict) -> tuple[list[dict], bool]:
        model_id = record.get("model_id")
        fitted = self.models.get(model_id)
        if fitted is None:
            return [
                self._reply(
                    {
                        "type": "error",
                        "code": "unknown_model",
                        "message": f"no fitted model with id {model_id!r}",
                    }
                )
            ], True
        n_subjects = int(record.get("n_subjects", 1))
        seed = int(record.get("seed", 0))
        torch.manual_seed(seed)
        settings = lm.GenerationSettings(
            temperature=self.settings.temperature,
            top_k=self.settings.top_k,
            max_new_tokens=self.settings.max_new_tokens,
        )

        out: list[dict] = []
        counts = {"parent": 0, "child": 0}
        for index in range(n_subjects):
            parent_sentence = lm.generate_sentence(
                fitted.parent_model, [lm.BOS], settings
            )
            out.append(
                self._reply(
                    {
                        "type": "sentence",
                        "table": "parent",
                        "index": index,
                        "text": parent_sentence,
                    }
                )
            )
            counts["parent"] += 1
            prefix = lm.child_prefix(parent_sentence)
            for _ in range(fitted.children_per_parent):
                child_sentence = lm.generate_sentence(
                    fitted.child_model, prefix, settings
                )
                out.append(
                    self._reply(
                        {
                            "type": "sentence",
                            "table": "child",
                            "parent_index": index,
                            "text": child_sentence,
                        }
                    )
                )
                counts["child"] += 1
        out.append(self._reply({"type": "done", "counts": counts}))
        return out, True

    def close(self) -> None:
        if self._transcript_fh is not None:
            self._transcript_fh.close()
            self._transcript_fh = None


def serve_stdio(settings: ServerSettings) -> None:
    session = AdapterSession(settings)
    try:
        for line in sys.stdin:
            responses, alive = session.handle_line(line)
            for record in responses:
                sys.stdout.write(json.dumps(record) + "\n")
                sys.stdout.flush()
            if not alive:
                break
    finally:
        session.close()


def serve_socket(settings: ServerSettings, host: str, port: int) -> None:
    """Accept one client and run the session over a TCP connection."""
    session = AdapterSession(settings)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(1)
    print(f"lm-adapter listening on {host}:{server.getsockname()[1]}", file=sys.stderr)
    conn, _ = server.accept()
    try:
        with conn.makefile("rw", encoding="utf-8") as stream:
            for line in stream:
                responses, alive = session.handle_line(line)
                for record in responses:
                    stream.write(json.dumps(record) + "\n")
                stream.flush()
                if not alive:
                    break
    finally:
        session.close()
        conn.close()
        server.close()
