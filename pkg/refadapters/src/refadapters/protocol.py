"""Server side of the line-delimited JSON wire protocol.

One flat JSON object per line on stdin/stdout. The first request is
`{"op": "hello"}`; the reply declares `name`, `ops`, and `dim` when the
embed capability is present. Every later request carries an integer `id`
echoed in the response. Anything diagnostic goes to stderr so stdout
stays protocol-clean.
"""

from __future__ import annotations

import json
import sys
from typing import Protocol


class Backend(Protocol):
    name: str
    ops: tuple[str, ...]

    def hello(self) -> dict: ...

    def handle(self, request: dict) -> dict: ...


def emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def serve(backend: Backend) -> None:
    """Answer requests until stdin closes."""
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            print(f"refadapter: dropping non-JSON line ({exc})", file=sys.stderr)
            continue
        if request.get("op") == "hello":
            emit(backend.hello())
            continue
        rid = request.get("id")
        op = request.get("op")
        if op not in backend.ops:
            emit({"id": rid, "error": f"unsupported op {op!r}"})
            continue
        try:
            response = backend.handle(request)
        except Exception as exc:  # report, keep serving
            print(f"refadapter: {op} request {rid} failed: {exc}", file=sys.stderr)
            emit({"id": rid, "error": str(exc)})
            continue
        response["id"] = rid
        emit(response)
