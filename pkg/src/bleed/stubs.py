"""Deterministic stub adapter speaking the wire protocol.

Run as ``python -m bleed.stubs --ops score,classify,embed,generate``.
Behaviour is trivial but fully deterministic, which makes the whole
attack pipeline testable offline:

  score     token count of the text
  classify  1.0 when the text contains a promo marker token, else 0.0
  embed     hashed term-frequency vector (same scheme as the built-in)
  generate  "PROMO {item}." with the item parsed from the prompt

Fault-injection flags exist for protocol tests: --swap-pairs buffers two
requests and answers them in reverse order, --dup-id answers everything
twice, --drop-op never answers a given op, --bad-prob and --bad-dim emit
out-of-contract values.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
import time

from .segmenter import tokenize

_ITEM_RE = re.compile(r"^Item: (.*)$", re.MULTILINE)


def _hashed_tf(text: str, dim: int) -> list[float]:
    # same FNV-1a hashed term-frequency scheme as the built-in embedder,
    # kept numpy-free so the stub starts fast
    vec = [0.0] * dim
    for token in tokenize(text):
        h = 0x811C9DC5
        for byte in token.encode("utf-8"):
            h = ((h ^ byte) * 0x01000193) & 0xFFFFFFFF
        vec[h % dim] += 1.0
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec] if norm else vec


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def _respond(request: dict, args) -> dict | None:
    op = request.get("op")
    rid = request.get("id")
    if op == args.drop_op:
        return None
    if op == "score":
        return {"id": rid, "score": float(len(tokenize(request.get("text", ""))))}
    if op == "classify":
        prob = 1.0 if args.promo_marker in request.get("text", "") else 0.0
        if args.bad_prob:
            prob = 1.2
        return {"id": rid, "prob": prob}
    if op == "embed":
        vector = _hashed_tf(request.get("text", ""), args.dim)
        if args.bad_dim:
            vector = vector + [0.0]
        return {"id": rid, "vector": vector}
    if op == "generate":
        if args.refuse:
            return {"id": rid, "text": ""}
        match = _ITEM_RE.search(request.get("prompt", ""))
        item = match.group(1).strip() if match else "item"
        return {"id": rid, "text": f"PROMO {item}. Extra trailing sentence."}
    return {"id": rid, "error": f"unsupported op {op!r}"}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bleed-stub")
    parser.add_argument("--ops", default="score,classify,embed,generate")
    parser.add_argument("--name", default="bleed-stub")
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--promo-marker", default="PROMO")
    parser.add_argument("--swap-pairs", action="store_true",
                        help="answer requests two at a time in reversed order")
    parser.add_argument("--dup-id", action="store_true", help="send every response twice")
    parser.add_argument("--drop-op", default=None, help="never respond to this op")
    parser.add_argument("--delay-first-ms", type=int, default=0,
                        help="sleep before answering the first request")
    parser.add_argument("--bad-prob", action="store_true", help="emit probabilities above 1")
    parser.add_argument("--bad-dim", action="store_true", help="emit vectors of the wrong length")
    parser.add_argument("--no-ops-field", action="store_true",
                        help="omit ops from the handshake reply")
    parser.add_argument("--no-dim-field", action="store_true",
                        help="omit dim from the handshake reply")
    parser.add_argument("--refuse", action="store_true", help="generate empty text")
    args = parser.parse_args(argv)

    ops = [o.strip() for o in args.ops.split(",") if o.strip()]

    pending: list[dict] = []
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        if request.get("op") == "hello":
            hello: dict = {"name": args.name}
            if not args.no_ops_field:
                hello["ops"] = ops
            if "embed" in ops and not args.no_dim_field:
                hello["dim"] = args.dim
            _emit(hello)
            continue

        if args.delay_first_ms:
            time.sleep(args.delay_first_ms / 1000.0)
            args.delay_first_ms = 0
        responses = [_respond(request, args)]
        if args.swap_pairs:
            pending.append(request)
            if len(pending) < 2:
                continue
            responses = [_respond(r, args) for r in reversed(pending)]
            pending.clear()
        for response in responses:
            if response is None:
                continue
            _emit(response)
            if args.dup_id:
                _emit(response)
    return 0


if __name__ == "__main__":
    sys.exit(main())
