import csv
import json
import sys

import pytest

from bleed.cli import main
from bleed.corpus import load_corpus, load_run

STUB = f"{sys.executable} -m bleed.stubs"


def test_segment_command(workspace, tmp_path):
    out = tmp_path / "sentences.jsonl"
    assert main(["segment", "--in", str(workspace.corpus), "--out", str(out)]) == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert all({"doc_id", "index", "char_start", "char_end", "text"} <= set(r) for r in records)
    assert len({r["doc_id"] for r in records}) == len(workspace.docs)


def test_salience_command(workspace, tmp_path):
    out = tmp_path / "salience.jsonl"
    assert main(["salience", "--corpus", str(workspace.corpus), "--out", str(out)]) == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(records) == len(workspace.docs)
    assert all(0 <= r["salient_index"] < len(r["scores"]) for r in records)


def test_salience_adapter_provider(workspace, tmp_path):
    out = tmp_path / "salience.jsonl"
    assert main([
        "salience", "--corpus", str(workspace.corpus), "--provider", "adapter",
        "--adapter-cmd", f"{STUB} --ops embed --dim 16", "--out", str(out),
    ]) == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(records) == len(workspace.docs)


def test_inject_command_requires_salience_for_rel(workspace, tmp_path):
    spans = tmp_path / "spans.tsv"
    doc_id = next(iter(workspace.docs))
    spans.write_text(f"{doc_id}\tacme\tBuy acme now.\n", encoding="utf-8")
    with pytest.raises(SystemExit):
        main([
            "inject", "--corpus", str(workspace.corpus), "--spans", str(spans),
            "--mode", "rel:after", "--out", str(tmp_path / "x.tsv"),
        ])


def test_inject_and_rank_pipeline(workspace, tmp_path):
    spans = tmp_path / "spans.tsv"
    spans.write_text(
        "".join(f"{d}\tacme\tNeutral promo span.\n" for d in workspace.docs),
        encoding="utf-8",
    )
    augmented = tmp_path / "augmented.tsv"
    assert main([
        "inject", "--corpus", str(workspace.corpus), "--spans", str(spans),
        "--mode", "abs:after", "--out", str(augmented),
    ]) == 0
    docs = load_corpus(augmented)
    assert len(docs) == len(workspace.docs)
    assert all("::abs:after::" in d.doc_id for d in docs)

    ranked = tmp_path / "out.trec"
    assert main([
        "rank", "--scorer", "bm25", "--queries", str(workspace.queries_path),
        "--corpus", str(workspace.corpus), "--candidates", str(workspace.run),
        "--out", str(ranked),
    ]) == 0
    run = load_run(ranked)
    assert set(run.query_ids()) == {"q1", "q2"}


def test_rank_adapter_scorer(workspace, tmp_path):
    out = tmp_path / "adapter.trec"
    assert main([
        "rank", "--scorer", "adapter", "--adapter-cmd", f"{STUB} --ops score",
        "--queries", str(workspace.queries_path), "--corpus", str(workspace.corpus),
        "--out", str(out),
    ]) == 0
    assert load_run(out).query_ids() == ["q1", "q2"]


def test_eval_ndcg_and_mrr(workspace, tmp_path):
    out = tmp_path / "metrics.csv"
    assert main([
        "eval", "ndcg", "--run", str(workspace.run), "--qrels", str(workspace.qrels),
        "--out", str(out),
    ]) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows[0]["metric"] == "ndcg@10"
    assert 0.0 <= float(rows[0]["value"]) <= 1.0

    assert main([
        "eval", "mrr", "--run", str(workspace.run), "--qrels", str(workspace.qrels),
        "--out", str(out),
    ]) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows[0]["metric"] == "mrr@10"


def test_eval_abnirml_between_runs(workspace, tmp_path):
    out = tmp_path / "metrics.csv"
    assert main([
        "eval", "abnirml", "--run", str(workspace.run), "--run-b", str(workspace.run),
        "--out", str(out),
    ]) == 0
    rows = list(csv.DictReader(out.open()))
    assert float(rows[0]["value"]) == 0.0


def test_eval_mrs_between_runs(workspace, tmp_path):
    # run-b carries strictly lower scores for one doc per query
    from bleed.corpus import RunEntry, load_run as _load
    base = _load(workspace.run)
    demoted = {
        qid: [
            RunEntry(e.doc_id, 0.1 if e.rank == 1 else e.score, e.rank)
            for e in base.entries(qid)
        ]
        for qid in base.query_ids()
    }
    run_b = tmp_path / "b.trec"
    # scores no longer ordered by the old ranks; rebuild a valid file by hand
    with open(run_b, "w", encoding="utf-8") as fh:
        for qid, entries in demoted.items():
            for i, e in enumerate(sorted(entries, key=lambda e: (-e.score, e.doc_id))):
                fh.write(f"{qid} Q0 {e.doc_id} {i + 1} {e.score:.6f} x\n")
    out = tmp_path / "metrics.csv"
    assert main([
        "eval", "mrs", "--run", str(workspace.run), "--run-b", str(run_b),
        "--out", str(out),
    ]) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows[0]["metric"] == "mean_rank_shift"
    assert float(rows[0]["value"]) > 0


def test_eval_mrpr_detects_augmented_ids(workspace, tmp_path):
    run_path = tmp_path / "aug.trec"
    run_path.write_text(
        "q1 Q0 d1::abs:after::aaaa 1 2.000000 x\n"
        "q1 Q0 d2 2 1.000000 x\n",
        encoding="utf-8",
    )
    out = tmp_path / "metrics.csv"
    assert main(["eval", "mrpr", "--run", str(run_path), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert float(rows[0]["value"]) == 1.0


def test_generate_command_with_stub(workspace, tmp_path):
    items = tmp_path / "items.txt"
    items.write_text("Acme\n", encoding="utf-8")
    out = tmp_path / "spans.tsv"
    assert main([
        "generate", "--corpus", str(workspace.corpus), "--items", str(items),
        "--adapter-cmd", f"{STUB} --ops generate", "--out", str(out),
    ]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == len(workspace.docs)
    assert all(line.endswith("PROMO Acme.") for line in lines)


def test_mitigate_and_tune_alpha(workspace, tmp_path):
    fused = tmp_path / "fused.trec"
    assert main([
        "mitigate", "--run", str(workspace.run), "--corpus", str(workspace.corpus),
        "--classifier", "builtin", "--alpha", "0.3", "--out", str(fused),
    ]) == 0
    assert load_run(fused).query_ids() == ["q1", "q2"]

    sweep = tmp_path / "sweep.csv"
    assert main([
        "tune-alpha", "--run", str(workspace.run), "--corpus", str(workspace.corpus),
        "--qrels", str(workspace.qrels), "--grid", "0:1:0.5", "--out", str(sweep),
    ]) == 0
    rows = list(csv.DictReader(sweep.open()))
    assert [r["alpha"] for r in rows] == ["0.000000", "0.500000", "1.000000"]


def test_study_cli_rq1(workspace, tmp_path):
    config = workspace.root / "study.toml"
    config.write_text(
        workspace.config_text()
        + '[[scorers]]\nkind = "decay"\n',
        encoding="utf-8",
    )
    out = tmp_path / "report"
    assert main(["study", "rq1", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "tables" / "positional.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["study"] == "rq1"
    assert set(manifest["inputs"]) == {"corpus", "queries", "qrels", "run"}


def test_study_cli_rq2(workspace, tmp_path):
    config = workspace.root / "study.toml"
    config.write_text(
        workspace.config_text(entities='["boost"]', alpha_grid="[0.1, 1.0]")
        + '[[scorers]]\nkind = "bm25"\n'
        + '[static_spans]\nboost = "Get alpha charlie boost today."\n'
        + '[classifier]\nkind = "oracle"\n',
        encoding="utf-8",
    )
    out = tmp_path / "report"
    assert main(["study", "rq2", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "tables" / "mitigation.csv").exists()
    assert (out / "figures" / "alpha_sweep.csv").exists()
