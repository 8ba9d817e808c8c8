"""Entry points; each command loads one backend and serves the protocol."""

from __future__ import annotations

import argparse
import sys

from .backends import BACKENDS, AdapterBackendConfig, ClassifierBackend
from .protocol import serve


def _parser(kind: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=f"refadapter-{kind}")
    parser.add_argument("--model", required=True, help="checkpoint id or local path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1)
    parser.add_argument("--max-seq-len", type=int, default=512)
    parser.add_argument("--name", default=f"refadapter-{kind}")
    if kind == "classify":
        parser.add_argument("--positive-label", type=int, default=1)
    return parser


def _main(kind: str, argv: list[str] | None = None) -> int:
    args = _parser(kind).parse_args(argv)
    cfg = AdapterBackendConfig(
        model=args.model, device=args.device,
        batch_size=args.batch_size, max_seq_len=args.max_seq_len,
    )
    try:
        if kind == "classify":
            backend = ClassifierBackend(cfg, name=args.name, positive_label=args.positive_label)
        else:
            backend = BACKENDS[kind](cfg, name=args.name)
    except Exception as exc:
        # model load failure: exit nonzero before any handshake
        print(f"refadapter-{kind}: failed to load {args.model!r}: {exc}", file=sys.stderr)
        return 1
    serve(backend)
    return 0


def main_score() -> int:
    return _main("score")


def main_classify() -> int:
    return _main("classify")


def main_embed() -> int:
    return _main("embed")


def main_generate() -> int:
    return _main("generate")


if __name__ == "__main__":
    sys.exit(_main(sys.argv[1], sys.argv[2:]))
