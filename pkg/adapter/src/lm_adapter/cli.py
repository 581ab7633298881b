"""lm-adapter command line: pretrain base weights, serve the protocol."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .model import pretrain
from .server import ServerSettings, serve_socket, serve_stdio


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lm-adapter",
        description=(
            "Reference language-model synthesizer backend speaking the "
            "tabsynth wire protocol (hello/train/sample over stdio or TCP)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("pretrain", help="build base weights on a generated corpus")
    pre.add_argument("--out", required=True, help="directory to write the weights to")
    pre.add_argument("--sentences", type=int, default=2000)
    pre.add_argument("--epochs", type=int, default=2)
    pre.add_argument("--batch-size", type=int, default=16)
    pre.add_argument("--seed", type=int, default=0)

    srv = sub.add_parser("serve", help="handle protocol requests")
    srv.add_argument("--model", required=True, help="pretrained weights directory")
    srv.add_argument("--transcript", help="record all traffic to this JSONL file")
    srv.add_argument("--temperature", type=float, default=0.45)
    srv.add_argument("--top-k", type=int, default=15)
    srv.add_argument("--max-new-tokens", type=int, default=200)
    srv.add_argument(
        "--children-per-parent",
        type=int,
        default=0,
        help="children generated per parent (default: training-average)",
    )
    srv.add_argument("--socket", help="HOST:PORT to listen on (default: stdio)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "pretrain":
        out = pretrain(
            args.out,
            n_sentences=args.sentences,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
        )
        print(f"pretrained weights written to {out}")
        return 0

    settings = ServerSettings(
        model_dir=Path(args.model),
        temperature=args.temperature,
        top_k=args.top_k,
        max_new_tokens=args.max_new_tokens,
        children_per_parent=args.children_per_parent,
        transcript=Path(args.transcript) if args.transcript else None,
    )
    try:
        if args.socket:
            host, _, port = args.socket.rpartition(":")
            serve_socket(settings, host or "127.0.0.1", int(port))
        else:
            serve_stdio(settings)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())
