"""Each backend must pass the primary toolkit's adapter conformance suite
unmodified, exit nonzero before the handshake on load failure, and replay
identically across process restarts."""

import json
import os
import subprocess
import sys

import pytest

from bleed.adapters import AdapterSession
from bleed.conformance import run_conformance

TIMEOUT_MS = 120000  # model load happens inside the handshake window


def _cmd(kind: str, model: str, *extra: str) -> list[str]:
    return [sys.executable, "-m", "refadapters.cli", kind, "--model", model, *extra]


def test_scorer_conformance(scorer_model):
    assert run_conformance(_cmd("score", scorer_model), timeout_ms=TIMEOUT_MS) == []


def test_classifier_conformance(classifier_model):
    assert run_conformance(_cmd("classify", classifier_model), timeout_ms=TIMEOUT_MS) == []


def test_embedder_conformance(embedder_model):
    assert run_conformance(_cmd("embed", embedder_model), timeout_ms=TIMEOUT_MS) == []


def test_generator_conformance(generator_model):
    assert run_conformance(_cmd("generate", generator_model), timeout_ms=TIMEOUT_MS) == []


def test_handshake_declares_backend_ops(scorer_model, embedder_model):
    with AdapterSession(_cmd("score", scorer_model), timeout_ms=TIMEOUT_MS) as session:
        assert session.capabilities == frozenset({"score"})
        assert session.name == "refadapter-score"
    with AdapterSession(_cmd("embed", embedder_model), timeout_ms=TIMEOUT_MS) as session:
        assert session.capabilities == frozenset({"embed"})
        assert session.embed_dim == 32


PROBE_PAIRS = [
    ("what is the capital of france", "paris is the capital of france"),
    ("what is the capital of france", "completely unrelated text about motorcycles"),
]


def _score_probe(model: str) -> list[float]:
    with AdapterSession(_cmd("score", model), timeout_ms=TIMEOUT_MS) as session:
        return session.score_batch(PROBE_PAIRS)


def test_scorer_regression_fixture_stable_across_runs(scorer_model):
    first = _score_probe(scorer_model)
    second = _score_probe(scorer_model)
    assert first == second
    assert all(isinstance(s, float) for s in first)


def test_classifier_probability_bounds(classifier_model):
    texts = ["buy the best promo", "the sky is blue", "", "a " * 600]
    with AdapterSession(_cmd("classify", classifier_model), timeout_ms=TIMEOUT_MS) as session:
        for text in texts:
            assert 0.0 <= session.classify(text) <= 1.0


def test_embedder_mean_pool_dimension(embedder_model):
    with AdapterSession(_cmd("embed", embedder_model), timeout_ms=TIMEOUT_MS) as session:
        vec = session.embed("paris is the capital of france")
        assert len(vec) == 32
        assert session.embed("paris is the capital of france") == vec


def test_generator_deterministic_and_bounded(generator_model):
    prompt = "Document: the sky is blue\nItem: acme\nResponse:"
    outputs = []
    for _ in range(2):
        with AdapterSession(_cmd("generate", generator_model), timeout_ms=TIMEOUT_MS) as session:
            outputs.append(session.generate(prompt, max_tokens=16))
    assert outputs[0] == outputs[1]
    assert isinstance(outputs[0], str)
    # byte-level vocab: one token is at most a handful of characters
    assert len(outputs[0]) <= 16 * 8


def test_generate_max_tokens_passthrough(generator_model):
    with AdapterSession(_cmd("generate", generator_model), timeout_ms=TIMEOUT_MS) as session:
        short = session.generate("Item: x\n", max_tokens=1)
        longer = session.generate("Item: x\n", max_tokens=32)
    assert len(short) <= len(longer)


def test_model_load_failure_exits_nonzero_before_handshake(tmp_path):
    proc = subprocess.run(
        _cmd("score", str(tmp_path / "no-such-model")),
        input="", capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode != 0
    assert proc.stdout == ""  # no handshake bytes were emitted


def test_protocol_error_response_for_unknown_op(scorer_model):
    proc = subprocess.Popen(
        _cmd("score", scorer_model),
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
    )
    try:
        out, _ = proc.communicate(
            json.dumps({"op": "hello"}) + "\n"
            + json.dumps({"id": 1, "op": "classify", "text": "x"}) + "\n",
            timeout=120,
        )
        lines = [json.loads(l) for l in out.splitlines() if l.strip()]
        assert lines[0]["ops"] == ["score"]
        assert lines[1]["id"] == 1
        assert "error" in lines[1]
    finally:
        proc.kill()


@pytest.mark.skipif(
    "REFADAPTERS_SCORER_MODEL" not in os.environ,
    reason="set REFADAPTERS_SCORER_MODEL to a real reranker checkpoint",
)
def test_real_scorer_prefers_on_topic_document():
    model = os.environ["REFADAPTERS_SCORER_MODEL"]
    on_topic, off_topic = _score_probe(model)
    assert on_topic > off_topic
