"""Command-line interface: segment, salience, inject, rank, eval,
mitigate, tune-alpha, generate, and the study runner."""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .adapters import AdapterSession
from .corpus import (
    Run, load_corpus, load_qrels, load_queries, load_run, save_corpus, save_run,
)
from .genattack import (
    GenerationRequest, HttpGenerator, RefusalError, build_prompt, generate_span,
    load_spans, save_spans,
)
from .injector import InjectionMode, inject
from .metrics import abnirml, mean_rank_shift, mrpr, mrr, ndcg_at_k
from .mitigation import (
    AdapterClassifier, BuiltinPromotionClassifier, FusionConfig, fuse_scores,
    promotion_probability, tune_alpha,
)
from .rankers import CorpusStats, ScorerHandle, rerank
from .salience import AdapterEmbedder, HashedTfEmbedder, load_profiles, salience_scores, save_profiles
from .segmenter import segment
from .runner import (
    load_study_config, run_contextual_study, run_mitigation_study, run_positional_study,
)


def _cmd_segment(args) -> int:
    docs = load_corpus(args.infile)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            for s in segment(doc).sentences:
                record = {
                    "doc_id": doc.doc_id, "index": s.index,
                    "char_start": s.char_start, "char_end": s.char_end, "text": s.text,
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return 0


def _make_provider(args):
    if args.provider == "adapter":
        if not args.adapter_cmd:
            raise SystemExit("--provider adapter requires --adapter-cmd")
        session = AdapterSession(args.adapter_cmd)
        return AdapterEmbedder(session), session
    return HashedTfEmbedder(), None


def _cmd_salience(args) -> int:
    docs = load_corpus(args.corpus)
    provider, session = _make_provider(args)
    try:
        profiles = [
            salience_scores(segment(d), provider, comparand=args.comparand) for d in docs
        ]
    finally:
        if session is not None:
            session.close()
    save_profiles(profiles, args.out)
    return 0


def _cmd_inject(args) -> int:
    docs = {d.doc_id: d for d in load_corpus(args.corpus)}
    mode = InjectionMode(args.mode)
    profiles = load_profiles(args.salience) if args.salience else {}
    augmented = []
    for doc_id, _item, span in load_spans(args.spans):
        if doc_id not in docs:
            raise SystemExit(f"span references unknown doc {doc_id!r}")
        profile = profiles.get(doc_id)
        if mode in (InjectionMode.REL_BEFORE, InjectionMode.REL_AFTER) and profile is None:
            raise SystemExit(f"mode {mode.value} requires --salience with a profile for {doc_id!r}")
        aug = inject(segment(docs[doc_id]), span, mode, profile=profile)
        augmented.append(aug.to_document())
    save_corpus(augmented, args.out)
    return 0


def _make_scorer(args, docs) -> tuple[ScorerHandle, AdapterSession | None]:
    if args.scorer == "bm25":
        return ScorerHandle.bm25(CorpusStats.build(docs), k1=args.k1, b=args.b), None
    if args.scorer == "decay":
        return ScorerHandle.decay(gamma=args.gamma), None
    if not args.adapter_cmd:
        raise SystemExit("--scorer adapter requires --adapter-cmd")
    session = AdapterSession(args.adapter_cmd)
    return ScorerHandle.adapter(session), session


def _cmd_rank(args) -> int:
    docs = load_corpus(args.corpus)
    by_id = {d.doc_id: d for d in docs}
    queries = load_queries(args.queries)
    scorer, session = _make_scorer(args, docs)
    candidates_run = load_run(args.candidates) if args.candidates else None
    ranked = {}
    try:
        for q in queries:
            if candidates_run is not None and q.query_id in candidates_run.queries:
                cands = [by_id[e.doc_id] for e in candidates_run.top_k(q.query_id, args.top_k)]
            else:
                cands = docs
            # ranks stay contiguous after truncation
            ranked[q.query_id] = rerank(q, cands, scorer)[:args.top_k]
    finally:
        if session is not None:
            session.close()
    save_run(Run(ranked), args.out, tag=args.tag)
    return 0


def _cmd_eval(args) -> int:
    run = load_run(args.run)
    rows: list[tuple[str, str]] = []
    if args.metric in ("abnirml", "mrs"):
        if not args.run_b:
            raise SystemExit(f"{args.metric} requires --run-b with augmented scores")
        run_b = load_run(args.run_b)
        if args.metric == "abnirml":
            triples = {}
            for qid in run.query_ids():
                if qid not in run_b.queries:
                    continue
                b_scores = {e.doc_id: e.score for e in run_b.entries(qid)}
                triples[qid] = [
                    (e.doc_id, e.score, b_scores[e.doc_id])
                    for e in run.entries(qid) if e.doc_id in b_scores
                ]
            rows.append(("abnirml", f"{abnirml(triples):.6f}"))
        else:
            shifts = []
            for qid in run.query_ids():
                if qid not in run_b.queries:
                    continue
                b_scores = {e.doc_id: e.score for e in run_b.entries(qid)}
                entries = run.entries(qid)
                shifts += [
                    mean_rank_shift(entries, e.doc_id, b_scores[e.doc_id])
                    for e in entries if e.doc_id in b_scores
                ]
            if not shifts:
                raise SystemExit("no overlapping documents between runs")
            rows.append(("mean_rank_shift", f"{sum(shifts) / len(shifts):.6f}"))
    elif args.metric == "ndcg":
        if not args.qrels:
            raise SystemExit("ndcg requires --qrels")
        qrels = load_qrels(args.qrels)
        rows.append((f"ndcg@{args.k}", f"{ndcg_at_k(run, qrels, k=args.k):.6f}"))
    elif args.metric == "mrr":
        if not args.qrels:
            raise SystemExit("mrr requires --qrels")
        qrels = load_qrels(args.qrels)
        value = mrr(run, qrels, rel_threshold=args.threshold, cutoff=args.cutoff)
        rows.append((f"mrr@{args.cutoff}", f"{value:.6f}"))
    else:  # mrpr
        if args.augmented_ids:
            with open(args.augmented_ids, encoding="utf-8") as fh:
                aug_ids = {line.strip() for line in fh if line.strip()}
        else:
            aug_ids = {
                e.doc_id for qid in run.query_ids() for e in run.entries(qid) if "::" in e.doc_id
            }
        rows.append((f"mrpr@{args.cutoff}", f"{mrpr(run, aug_ids, cutoff=args.cutoff):.6f}"))

    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(rows)
    for name, value in rows:
        print(f"{name}\t{value}")
    return 0


def _make_classifier(args):
    if args.classifier == "adapter":
        if not args.adapter_cmd:
            raise SystemExit("--classifier adapter requires --adapter-cmd")
        session = AdapterSession(args.adapter_cmd)
        return AdapterClassifier(session), session
    return BuiltinPromotionClassifier(brand_terms=args.brand or []), None


def _verdicts_for_run(run, docs, classifier, cfg):
    verdicts = {}
    for qid in run.query_ids():
        for e in run.entries(qid):
            if e.doc_id in verdicts:
                continue
            verdicts[e.doc_id] = promotion_probability(segment(docs[e.doc_id]), classifier, cfg)
    return verdicts


def _cmd_mitigate(args) -> int:
    docs = {d.doc_id: d for d in load_corpus(args.corpus)}
    run = load_run(args.run)
    cfg = FusionConfig(alpha=args.alpha, window_sentences=args.window, stride=args.stride)
    classifier, session = _make_classifier(args)
    try:
        verdicts = _verdicts_for_run(run, docs, classifier, cfg)
    finally:
        if session is not None:
            session.close()
    fused = {qid: fuse_scores(run.entries(qid), verdicts, args.alpha) for qid in run.query_ids()}
    save_run(Run(fused), args.out, tag="fused")
    return 0


def _parse_grid(spec: str) -> list[float]:
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        grid, value = [], start
        while value <= stop + 1e-9:
            grid.append(round(value, 10))
            value += step
        return grid
    return [float(x) for x in spec.split(",")]


def _cmd_tune_alpha(args) -> int:
    docs = {d.doc_id: d for d in load_corpus(args.corpus)}
    run = load_run(args.run)
    qrels = load_qrels(args.qrels)
    cfg = FusionConfig(alpha=0.0, window_sentences=args.window, stride=args.stride)
    classifier, session = _make_classifier(args)
    try:
        verdicts = _verdicts_for_run(run, docs, classifier, cfg)
    finally:
        if session is not None:
            session.close()

    def evaluate(alpha: float) -> float:
        fused = {qid: fuse_scores(run.entries(qid), verdicts, alpha) for qid in run.query_ids()}
        return ndcg_at_k(Run(fused), qrels, k=10)

    best, sweep = tune_alpha(_parse_grid(args.grid), evaluate)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["alpha", "ndcg10"])
        for alpha, score in sweep:
            writer.writerow([f"{alpha:.6f}", f"{score:.6f}"])
    print(f"best_alpha\t{best:.6f}")
    return 0


def _cmd_generate(args) -> int:
    docs = load_corpus(args.corpus)
    with open(args.items, encoding="utf-8") as fh:
        items = [line.strip() for line in fh if line.strip()]
    if args.http_url:
        client = HttpGenerator(args.http_url, model=args.model)
        session = None
    elif args.adapter_cmd:
        session = AdapterSession(args.adapter_cmd)
        client = session
    else:
        raise SystemExit("generate requires --adapter-cmd or --http-url")
    rows = []
    failures = 0
    try:
        for doc in docs:
            for item in items:
                prompt = build_prompt(doc.text, item)
                try:
                    span = generate_span(GenerationRequest(prompt, max_tokens=args.max_tokens), client)
                except RefusalError as exc:
                    failures += 1
                    print(f"refused: doc={doc.doc_id} item={item!r} raw={exc.raw!r}", file=sys.stderr)
                    continue
                rows.append((doc.doc_id, item, span))
    finally:
        if session is not None:
            session.close()
    save_spans(rows, args.out)
    if failures:
        print(f"{failures} generation(s) refused", file=sys.stderr)
    return 0


def _cmd_study(args) -> int:
    cfg = load_study_config(args.config, workers=args.workers)
    runner = {
        "rq1": run_positional_study,
        "rq1-context": run_contextual_study,
        "rq2": run_mitigation_study,
    }[args.study]
    report = runner(cfg, out_dir=args.out)
    for name in sorted(report.tables):
        print(f"table {name}: {len(report.tables[name].rows)} rows -> {args.out}/tables/{name}.csv")
    for error in report.errors:
        print(f"error: {error}", file=sys.stderr)
    return 1 if report.errors else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bleed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="emit one jsonl record per sentence with offsets")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("salience", help="per-sentence salience profiles")
    p.add_argument("--corpus", required=True)
    p.add_argument("--provider", choices=["builtin", "adapter"], default="builtin")
    p.add_argument("--adapter-cmd", default="")
    p.add_argument("--comparand", choices=["document", "centroid"], default="document")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_salience)

    p = sub.add_parser("inject", help="produce augmented documents from spans")
    p.add_argument("--corpus", required=True)
    p.add_argument("--spans", required=True, help="TSV: doc_id, item, span")
    p.add_argument("--mode", required=True, choices=[m.value for m in InjectionMode])
    p.add_argument("--salience", default="", help="salience.jsonl for rel modes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inject)

    p = sub.add_parser("rank", help="score and rank candidates")
    p.add_argument("--scorer", choices=["bm25", "decay", "adapter"], required=True)
    p.add_argument("--adapter-cmd", default="")
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", default="", help="TREC run of candidates; whole corpus if omitted")
    p.add_argument("--corpus", required=True)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--tag", default="bleed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("eval", help="compute a metric over runs")
    p.add_argument("metric", choices=["abnirml", "mrs", "ndcg", "mrr", "mrpr"])
    p.add_argument("--run", required=True)
    p.add_argument("--run-b", default="")
    p.add_argument("--qrels", default="")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--cutoff", type=int, default=10)
    p.add_argument("--threshold", type=int, default=2)
    p.add_argument("--augmented-ids", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("mitigate", help="fuse run scores with promotion probabilities")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--classifier", choices=["builtin", "adapter"], default="builtin")
    p.add_argument("--adapter-cmd", default="")
    p.add_argument("--brand", action="append", help="brand term for the builtin lexicon")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mitigate)

    p = sub.add_parser("tune-alpha", help="sweep alpha on nDCG@10")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--classifier", choices=["builtin", "adapter"], default="builtin")
    p.add_argument("--adapter-cmd", default="")
    p.add_argument("--brand", action="append")
    p.add_argument("--grid", default="0:1:0.1", help="start:stop:step or comma list")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tune_alpha)

    p = sub.add_parser("generate", help="generate contextualised promotional spans")
    p.add_argument("--corpus", required=True)
    p.add_argument("--items", required=True, help="one entity per line")
    p.add_argument("--adapter-cmd", default="")
    p.add_argument("--http-url", default="")
    p.add_argument("--model", default="")
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("study", help="run a full study from a TOML config")
    p.add_argument("study", choices=["rq1", "rq1-context", "rq2"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_study)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
