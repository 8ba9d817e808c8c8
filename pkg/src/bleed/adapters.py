"""Line-delimited JSON wire protocol to external scorers, classifiers,
embedders, and generators running as child processes.

One flat JSON record per line over the child's stdin/stdout. A handshake
(`{"op": "hello"}`) precedes all requests and declares capabilities.
Every request carries a unique integer id which the response must echo;
responses may arrive out of order and are reassembled by id.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import subprocess
import threading
from typing import Sequence

DEFAULT_TIMEOUT_MS = 30000
TIMEOUT_ENV_VAR = "BLEED_ADAPTER_TIMEOUT_MS"
MAX_CONSECUTIVE_TIMEOUTS = 3

KNOWN_OPS = ("score", "classify", "embed", "generate")


class AdapterError(RuntimeError):
    """Adapter transport or session failure."""


class HandshakeError(AdapterError):
    pass


class ProtocolError(AdapterError):
    """The adapter violated the wire contract."""


class AdapterTimeout(AdapterError):
    pass


_EOF = object()


class AdapterSession:
    """Owns one adapter child process; use from one worker at a time."""

    def __init__(self, command: str | Sequence[str], timeout_ms: int | None = None):
        if timeout_ms is None:
            timeout_ms = int(os.environ.get(TIMEOUT_ENV_VAR, DEFAULT_TIMEOUT_MS))
        self.timeout_s = timeout_ms / 1000.0
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.command = argv
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterError(f"failed to spawn adapter {argv!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._next_id = 1
        self._consecutive_timeouts = 0
        self._abandoned: set[int] = set()
        self._failed = False
        self.name: str | None = None
        self.capabilities: frozenset[str] = frozenset()
        self.embed_dim: int | None = None
        self.handshake()

    # -- transport ---------------------------------------------------------

    def _read_loop(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(_EOF)

    def _send(self, record: dict) -> None:
        if self._failed:
            raise AdapterError("session already failed; restart the adapter")
        try:
            self._proc.stdin.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            self._failed = True
            raise AdapterError(f"adapter {self.command!r} pipe closed: {exc}") from exc

    def _recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            self._consecutive_timeouts += 1
            if self._consecutive_timeouts >= MAX_CONSECUTIVE_TIMEOUTS:
                self._failed = True
            raise AdapterTimeout(
                f"adapter {self.command!r} timed out after {self.timeout_s * 1000:.0f} ms"
            ) from None
        if line is _EOF:
            self._failed = True
            raise AdapterError(f"adapter {self.command!r} closed its output")
        self._consecutive_timeouts = 0
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"adapter sent non-JSON line {line!r}") from exc
        if not isinstance(record, dict):
            raise ProtocolError(f"adapter sent non-object message {record!r}")
        return record

    # -- protocol ----------------------------------------------------------

    def handshake(self) -> frozenset[str]:
        self._send({"op": "hello"})
        try:
            reply = self._recv()
        except AdapterError as exc:
            raise HandshakeError(f"no handshake reply: {exc}") from exc
        if "name" not in reply or "ops" not in reply:
            raise HandshakeError(f"handshake reply missing name/ops: {reply!r}")
        ops = reply["ops"]
        if not isinstance(ops, list) or not all(isinstance(o, str) for o in ops):
            raise HandshakeError(f"handshake ops must be a list of strings: {ops!r}")
        unknown = set(ops) - set(KNOWN_OPS)
        if unknown:
            raise HandshakeError(f"handshake declares unknown ops {sorted(unknown)}")
        if "embed" in ops:
            dim = reply.get("dim")
            if not isinstance(dim, int) or dim < 1:
                raise HandshakeError(f"embed capability requires a positive integer dim, got {dim!r}")
            self.embed_dim = dim
        self.name = str(reply["name"])
        self.capabilities = frozenset(ops)
        return self.capabilities

    def _require(self, op: str) -> None:
        if op not in self.capabilities:
            raise AdapterError(f"adapter {self.name!r} does not declare op {op!r}")

    def _request_many(self, records: list[dict]) -> dict[int, dict]:
        """Send a batch and reassemble replies by id, tolerating any arrival order."""
        expected = {r["id"] for r in records}
        for r in records:
            self._send(r)
        collected: dict[int, dict] = {}
        while len(collected) < len(expected):
            try:
                reply = self._recv()
            except AdapterTimeout:
                # a timed-out request may still answer later; remember its id
                # so a late reply is dropped instead of poisoning the session
                self._abandoned |= expected - set(collected)
                raise
            rid = reply.get("id")
            if not isinstance(rid, int):
                raise ProtocolError(f"response missing integer id: {reply!r}")
            if rid in self._abandoned:
                continue
            if rid not in expected:
                raise ProtocolError(f"response id {rid} was never requested")
            if rid in collected:
                raise ProtocolError(f"duplicate response id {rid}")
            collected[rid] = reply
        return collected

    def _fresh_ids(self, count: int) -> list[int]:
        ids = list(range(self._next_id, self._next_id + count))
        self._next_id += count
        return ids

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        """Score (query text, doc text) pairs; output order equals input order."""
        self._require("score")
        ids = self._fresh_ids(len(pairs))
        records = [
            {"id": rid, "op": "score", "query": q, "text": t}
            for rid, (q, t) in zip(ids, pairs)
        ]
        replies = self._request_many(records)
        scores = []
        for rid in ids:
            value = replies[rid].get("score")
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ProtocolError(f"score response {rid} missing numeric score")
            scores.append(float(value))
        return scores

    def classify(self, text: str) -> float:
        self._require("classify")
        rid = self._fresh_ids(1)[0]
        reply = self._request_many([{"id": rid, "op": "classify", "text": text}])[rid]
        prob = reply.get("prob")
        if not isinstance(prob, (int, float)) or isinstance(prob, bool):
            raise ProtocolError(f"classify response missing numeric prob: {reply!r}")
        if not 0.0 <= prob <= 1.0:
            raise ProtocolError(f"classify prob {prob} out of [0, 1]")
        return float(prob)

    def embed(self, text: str) -> list[float]:
        self._require("embed")
        rid = self._fresh_ids(1)[0]
        reply = self._request_many([{"id": rid, "op": "embed", "text": text}])[rid]
        vector = reply.get("vector")
        if not isinstance(vector, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vector
        ):
            raise ProtocolError(f"embed response missing numeric vector: {reply!r}")
        if len(vector) != self.embed_dim:
            raise ProtocolError(f"embed vector length {len(vector)} != declared dim {self.embed_dim}")
        return [float(v) for v in vector]

    def generate(self, prompt: str, max_tokens: int = 128) -> str:
        self._require("generate")
        rid = self._fresh_ids(1)[0]
        reply = self._request_many(
            [{"id": rid, "op": "generate", "prompt": prompt, "max_tokens": max_tokens}]
        )[rid]
        text = reply.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"generate response missing text: {reply!r}")
        return text

    # -- lifecycle ---------------------------------------------------------

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "AdapterSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
