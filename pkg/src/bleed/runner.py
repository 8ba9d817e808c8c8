"""End-to-end studies: positional/contextual preference (RQ-1) and
mitigation (RQ-2), with Bonferroni-corrected significance and CSV/Markdown
table output.

Reports are byte-identical across runs and worker counts for a fixed seed:
queries are independent units of parallelism, merged in sorted query order,
and every float is formatted at fixed precision. All intermediate artifacts
(runs, spans, verdicts) persist under the output directory next to a
manifest of input digests.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .adapters import AdapterError, AdapterSession
from .corpus import (
    Document, Run, RunEntry,
    load_corpus, load_qrels, load_queries, load_run, save_run,
)
from .genattack import GenerationRequest, HttpGenerator, build_prompt, generate_span, load_spans, save_spans
from .injector import AugmentedDocument, InjectionMode, inject, token_distance_to_salient
from .metrics import abnirml, mean_rank_shift, mrr, mrpr, ndcg_at_k, paired_t_test
from .mitigation import (
    AdapterClassifier, BuiltinPromotionClassifier, FusionConfig, PromotionVerdict,
    build_pseudo_corpus, fuse_scores, promotion_probability, tune_alpha,
)
from .rankers import CorpusStats, ScorerError, ScorerHandle, rerank
from .salience import HashedTfEmbedder, SalienceProfile, salience_scores
from .segmenter import SegmentedDocument, segment, truncate_to_first_sentence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class StudyError(ValueError):
    pass


BAND_NAMES = ("relevant", "related", "non_relevant")


@dataclass
class ScorerSpec:
    kind: str
    label: str = ""
    k1: float = 1.2
    b: float = 0.75
    gamma: float = 0.95
    command: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("bm25", "decay", "adapter"):
            raise StudyError(f"unknown scorer kind {self.kind!r}")
        if self.kind == "adapter" and not self.command:
            raise StudyError("adapter scorer needs a command")
        if not self.label:
            self.label = self.kind


@dataclass
class ClassifierSpec:
    kind: str = "builtin"
    command: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("builtin", "adapter", "oracle"):
            raise StudyError(f"unknown classifier kind {self.kind!r}")
        if self.kind == "adapter" and not self.command:
            raise StudyError("adapter classifier needs a command")


@dataclass
class GeneratorSpec:
    command: str = ""
    http_url: str = ""
    model: str = ""
    spans: str = ""  # precomputed spans.tsv (doc_id, item, span)


@dataclass
class StudyConfig:
    corpus: Path
    queries: Path
    qrels: Path
    run: Path
    scorers: list[ScorerSpec] = field(default_factory=lambda: [ScorerSpec("bm25")])
    modes: list[InjectionMode] = field(default_factory=lambda: list(InjectionMode))
    bands: list[str] = field(default_factory=lambda: list(BAND_NAMES))
    entities: list[str] = field(default_factory=list)
    static_spans: dict[str, str] = field(default_factory=dict)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    alpha_grid: list[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    rq2_mode: InjectionMode = InjectionMode.ABS_AFTER
    top_k: int = 100
    seed: int = 42
    family_size: int = 0  # 0 means one family per emitted table
    span_select: str = "first"
    include_unjudged: bool = False
    salience_comparand: str = "document"
    mrr_cutoff: int = 10
    workers: int = 1

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise StudyError(f"top_k must be >= 1, got {self.top_k}")
        if self.workers < 1:
            raise StudyError(f"workers must be >= 1, got {self.workers}")
        if self.span_select not in ("first", "salient"):
            raise StudyError(f"span_select must be first|salient, got {self.span_select!r}")
        for band in self.bands:
            if band not in BAND_NAMES:
                raise StudyError(f"unknown band {band!r}")
        for path in (self.corpus, self.queries, self.qrels, self.run):
            if not Path(path).exists():
                raise StudyError(f"input file missing: {path}")
        labels = [s.label for s in self.scorers]
        if len(set(labels)) != len(labels):
            raise StudyError(f"scorer labels must be unique, got {labels}")


def load_study_config(path: str | Path, workers: int | None = None) -> StudyConfig:
    """Parse a study TOML file; relative paths resolve against its directory."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    base = path.parent

    def respath(key: str) -> Path:
        if key not in raw:
            raise StudyError(f"{path}: missing required key {key!r}")
        return base / raw[key]

    scorers = [ScorerSpec(**s) for s in raw.get("scorers", [{"kind": "bm25"}])]
    fusion_raw = raw.get("fusion", {})
    fusion = FusionConfig(
        alpha=fusion_raw.get("alpha", 0.1),
        window_sentences=fusion_raw.get("window", 3),
        stride=fusion_raw.get("stride", 1),
    )
    generator_raw = dict(raw.get("generator", {}))
    if generator_raw.get("spans"):
        generator_raw["spans"] = str(base / generator_raw["spans"])
    cfg = StudyConfig(
        corpus=respath("corpus"),
        queries=respath("queries"),
        qrels=respath("qrels"),
        run=respath("run"),
        scorers=scorers,
        modes=[InjectionMode(m) for m in raw.get("modes", [m.value for m in InjectionMode])],
        bands=list(raw.get("bands", BAND_NAMES)),
        entities=list(raw.get("entities", [])),
        static_spans=dict(raw.get("static_spans", {})),
        generator=GeneratorSpec(**generator_raw),
        classifier=ClassifierSpec(**raw.get("classifier", {})),
        fusion=fusion,
        alpha_grid=list(raw.get("alpha_grid", [round(0.1 * i, 1) for i in range(11)])),
        rq2_mode=InjectionMode(raw.get("rq2_mode", "abs:after")),
        top_k=raw.get("top_k", 100),
        seed=raw.get("seed", 42),
        family_size=raw.get("family_size", 0),
        span_select=raw.get("span_select", "first"),
        include_unjudged=raw.get("include_unjudged", False),
        salience_comparand=raw.get("salience_comparand", "document"),
        mrr_cutoff=raw.get("mrr_cutoff", 10),
        workers=workers if workers is not None else raw.get("workers", 1),
    )
    return cfg


# ---------------------------------------------------------------------------
# report containers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    if value is None:
        return ""
    return str(value)


@dataclass
class Table:
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise StudyError(f"row width {len(values)} != {len(self.columns)} columns")
        self.rows.append(list(values))

    def formatted(self) -> list[list[str]]:
        return [[_fmt(v) for v in row] for row in self.rows]


@dataclass
class StudyReport:
    study: str
    tables: dict[str, Table] = field(default_factory=dict)
    figures: dict[str, Table] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)


def _write_csv(table: Table, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        writer.writerows(table.formatted())


def _write_markdown(table: Table, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("| " + " | ".join(table.columns) + " |\n")
        fh.write("|" + "|".join("---" for _ in table.columns) + "|\n")
        for row in table.formatted():
            fh.write("| " + " | ".join(row) + " |\n")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_digest(cfg: StudyConfig) -> str:
    def encode(obj):
        if isinstance(obj, Path):
            return str(obj)
        if isinstance(obj, InjectionMode):
            return obj.value
        if hasattr(obj, "__dict__"):
            return {k: encode(v) for k, v in sorted(vars(obj).items())}
        if isinstance(obj, dict):
            return {k: encode(v) for k, v in sorted(obj.items())}
        if isinstance(obj, (list, tuple)):
            return [encode(v) for v in obj]
        return obj

    encoded = encode(cfg)
    encoded.pop("workers", None)  # execution detail; reports must not depend on it
    blob = json.dumps(encoded, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_report(report: StudyReport, cfg: StudyConfig, out_dir: str | Path) -> Path:
    """Persist tables, figures and a manifest; returns the output directory."""
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    for name, table in report.tables.items():
        _write_csv(table, out / "tables" / f"{name}.csv")
        _write_markdown(table, out / "tables" / f"{name}.md")
    for name, table in report.figures.items():
        _write_csv(table, out / "figures" / f"{name}.csv")
    manifest = {
        "study": report.study,
        "version": __version__,
        "config_digest": _config_digest(cfg),
        "inputs": {
            name: _sha256_file(Path(p))
            for name, p in (
                ("corpus", cfg.corpus), ("queries", cfg.queries),
                ("qrels", cfg.qrels), ("run", cfg.run),
            )
        },
        "tables": sorted(report.tables),
        "figures": sorted(report.figures),
        "errors": report.errors,
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


# ---------------------------------------------------------------------------
# shared study machinery
# ---------------------------------------------------------------------------

class ScorerPool:
    """Hands out scorer handles; adapter sessions are one per worker thread."""

    def __init__(self, spec: ScorerSpec, stats: CorpusStats):
        self.spec = spec
        self._shared: ScorerHandle | None = None
        if spec.kind == "bm25":
            self._shared = ScorerHandle.bm25(stats, k1=spec.k1, b=spec.b)
        elif spec.kind == "decay":
            self._shared = ScorerHandle.decay(gamma=spec.gamma)
        self._local = threading.local()
        self._sessions: list[AdapterSession] = []
        self._lock = threading.Lock()

    def handle(self) -> ScorerHandle:
        if self._shared is not None:
            return self._shared
        handle = getattr(self._local, "handle", None)
        if handle is None:
            session = AdapterSession(self.spec.command)
            with self._lock:
                self._sessions.append(session)
            handle = ScorerHandle.adapter(session)
            self._local.handle = handle
        return handle

    def close(self) -> None:
        for session in self._sessions:
            session.close()
        self._sessions.clear()


class ClassifierPool:
    """Per-thread adapter sessions for classification; builtin is shared."""

    def __init__(self, spec: ClassifierSpec, brand_terms: tuple[str, ...]):
        self.spec = spec
        self.brand_terms = brand_terms
        self._local = threading.local()
        self._sessions: list[AdapterSession] = []
        self._lock = threading.Lock()
        self._builtin = BuiltinPromotionClassifier(brand_terms=brand_terms)

    def classifier(self):
        if self.spec.kind == "builtin":
            return self._builtin
        clf = getattr(self._local, "clf", None)
        if clf is None:
            session = AdapterSession(self.spec.command)
            with self._lock:
                self._sessions.append(session)
            clf = AdapterClassifier(session)
            self._local.clf = clf
        return clf

    def close(self) -> None:
        for session in self._sessions:
            session.close()
        self._sessions.clear()


class _StudyContext:
    def __init__(self, cfg: StudyConfig):
        self.cfg = cfg
        docs = load_corpus(cfg.corpus)
        self.docs = {d.doc_id: d for d in docs}
        self.queries = {q.query_id: q for q in load_queries(cfg.queries)}
        self.qrels = load_qrels(cfg.qrels)
        self.run = load_run(cfg.run)
        self.stats = CorpusStats.build(docs)
        self.provider = HashedTfEmbedder()
        self._segs: dict[str, SegmentedDocument] = {}
        self._profiles: dict[str, SalienceProfile] = {}
        for qid in self.run.query_ids():
            if qid not in self.queries:
                raise StudyError(f"run query {qid!r} missing from queries file")
            for e in self.run.top_k(qid, cfg.top_k):
                if e.doc_id not in self.docs:
                    raise StudyError(f"run doc {e.doc_id!r} missing from corpus")

    def qids(self) -> list[str]:
        return sorted(self.run.query_ids())

    def seg(self, doc_id: str) -> SegmentedDocument:
        cached = self._segs.get(doc_id)
        if cached is None:
            cached = self._segs.setdefault(doc_id, segment(self.docs[doc_id]))
        return cached

    def profile(self, doc_id: str) -> SalienceProfile:
        cached = self._profiles.get(doc_id)
        if cached is None:
            computed = salience_scores(
                self.seg(doc_id), self.provider, comparand=self.cfg.salience_comparand
            )
            cached = self._profiles.setdefault(doc_id, computed)
        return cached

    def candidates(self, qid: str) -> list[Document]:
        return [self.docs[e.doc_id] for e in self.run.top_k(qid, self.cfg.top_k)]

    def map_queries(self, fn) -> dict[str, object]:
        """Apply fn to every query id; merge is by sorted id, so results do
        not depend on scheduling."""
        qids = self.qids()
        if self.cfg.workers == 1:
            return {qid: fn(qid) for qid in qids}
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            results = list(pool.map(fn, qids))
        return dict(zip(qids, results))


def _band_span(ctx: _StudyContext, qid: str, band: str) -> str | None:
    """Seeded choice of a span-source document for one query and band."""
    cfg = ctx.cfg
    judged = ctx.qrels.judged(qid)
    if band == "relevant":
        pool = [d for d, g in judged.items() if g >= 2 and d in ctx.docs]
    elif band == "related":
        pool = [d for d, g in judged.items() if g <= 1 and d in ctx.docs]
        if cfg.include_unjudged:
            pool += [
                e.doc_id for e in ctx.run.top_k(qid, cfg.top_k)
                if e.doc_id not in judged
            ]
    else:
        # cross-query judgments only; docs also judged for this query keep
        # their same-query band
        pool = sorted({
            d for (q2, d) in ctx.qrels.entries
            if q2 != qid and d in ctx.docs and d not in judged
        })
    if not pool:
        return None
    rng = random.Random(f"{cfg.seed}|{qid}|{band}")
    source_id = rng.choice(sorted(pool))
    if cfg.span_select == "salient":
        seg = ctx.seg(source_id)
        return seg.sentences[ctx.profile(source_id).salient_index].text
    return truncate_to_first_sentence(ctx.docs[source_id].text)


@dataclass
class _CellStats:
    """Per-(mode, band/source) accumulation for one query."""
    triples: list[tuple[str, float, float]] = field(default_factory=list)
    shifts: list[int] = field(default_factory=list)
    judged_shifts: list[int] = field(default_factory=list)
    distances: list[tuple[str, int, int]] = field(default_factory=list)  # doc, distance, shift

    def mean_delta(self) -> float:
        return sum(o - a for _, o, a in self.triples) / len(self.triples)


def _score_cell(
    ctx: _StudyContext,
    handle: ScorerHandle,
    qid: str,
    span: str,
    mode: InjectionMode,
    orig_slice: list[RunEntry],
    orig_scores: dict[str, float],
) -> _CellStats:
    query = ctx.queries[qid]
    cell = _CellStats()
    judged = ctx.qrels.judged(qid)
    docs = ctx.candidates(qid)
    augs = [
        inject(ctx.seg(d.doc_id), span, mode, profile=ctx.profile(d.doc_id))
        for d in docs
    ]
    aug_scores = handle.score_batch(query, augs)
    for doc, aug, s_aug in zip(docs, augs, aug_scores):
        s_orig = orig_scores[doc.doc_id]
        cell.triples.append((doc.doc_id, s_orig, s_aug))
        shift = mean_rank_shift(orig_slice, doc.doc_id, s_aug)
        cell.shifts.append(shift)
        if doc.doc_id in judged:
            cell.judged_shifts.append(shift)
        distance = token_distance_to_salient(aug, ctx.profile(doc.doc_id))
        cell.distances.append((doc.doc_id, distance, shift))
    return cell


def _aggregate_cells(
    per_query: dict[str, dict[str, _CellStats]],
    key: str,
    family: int,
) -> dict | None:
    """Pool one cell across queries; returns None when no query had data."""
    cells = [(qid, cells[key]) for qid, cells in sorted(per_query.items()) if key in cells]
    if not cells:
        return None
    triples = [t for _, c in cells for t in c.triples]
    shifts = [s for _, c in cells for s in c.shifts]
    judged = [s for _, c in cells for s in c.judged_shifts]
    deltas = [c.mean_delta() for _, c in cells]
    sig = paired_t_test(deltas, family_size=family) if len(deltas) >= 2 else None
    return {
        "n_queries": len(cells),
        "n_docs": len(triples),
        "abnirml": abnirml(triples),
        "mean_mrs": sum(shifts) / len(shifts),
        "mean_mrs_judged": (sum(judged) / len(judged)) if judged else None,
        "t": sig.t_statistic if sig else None,
        "p": sig.p_value if sig else None,
        "adjusted_alpha": sig.adjusted_alpha if sig else None,
        "significant": sig.significant if sig else None,
    }


def _save_triples(path: Path, per_query: dict[str, dict[str, _CellStats]], key: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query_id", "doc_id", "score_original", "score_augmented"])
        for qid in sorted(per_query):
            if key not in per_query[qid]:
                continue
            for doc_id, orig, aug in per_query[qid][key].triples:
                writer.writerow([qid, doc_id, f"{orig:.6f}", f"{aug:.6f}"])


# ---------------------------------------------------------------------------
# RQ-1: positional study
# ---------------------------------------------------------------------------

def run_positional_study(cfg: StudyConfig, out_dir: str | Path | None = None) -> StudyReport:
    """ABNIRML, mean rank shift, and significance per scorer x mode x band."""
    ctx = _StudyContext(cfg)
    report = StudyReport("rq1")
    table = Table([
        "scorer", "mode", "band", "n_queries", "n_docs", "abnirml",
        "mean_mrs", "mean_mrs_judged", "t", "p", "adjusted_alpha", "significant",
    ])
    distance = Table(["scorer", "mode", "band", "query_id", "doc_id", "token_distance", "rank_shift"])

    spans = {
        (qid, band): _band_span(ctx, qid, band)
        for qid in ctx.qids() for band in cfg.bands
    }
    cell_keys = [(mode, band) for mode in cfg.modes for band in cfg.bands]
    family = cfg.family_size or (len(cfg.scorers) * len(cell_keys))
    artifacts = None
    if out_dir is not None:
        artifacts = Path(out_dir) / "artifacts"
        artifacts.mkdir(parents=True, exist_ok=True)
        save_spans(
            sorted((qid, band, span) for (qid, band), span in spans.items() if span),
            artifacts / "band_spans.tsv",
        )

    for spec in cfg.scorers:
        pool = ScorerPool(spec, ctx.stats)
        try:
            def work(qid: str) -> tuple[list[RunEntry], dict[str, _CellStats]]:
                handle = pool.handle()
                orig_slice = rerank(ctx.queries[qid], ctx.candidates(qid), handle)
                orig_scores = {e.doc_id: e.score for e in orig_slice}
                cells: dict[str, _CellStats] = {}
                for mode, band in cell_keys:
                    span = spans[(qid, band)]
                    if span is None:
                        continue
                    cells[f"{mode.value}|{band}"] = _score_cell(
                        ctx, handle, qid, span, mode, orig_slice, orig_scores
                    )
                return orig_slice, cells

            results = ctx.map_queries(work)
        except (ScorerError, AdapterError) as exc:
            report.errors.append(f"scorer {spec.label}: {exc}")
            continue
        finally:
            pool.close()

        per_query = {qid: cells for qid, (_, cells) in results.items()}
        if artifacts is not None:
            slices = {qid: entries for qid, (entries, _) in results.items()}
            save_run(Run(slices), artifacts / f"rq1_{spec.label}.trec", tag=spec.label)

        for mode, band in cell_keys:
            key = f"{mode.value}|{band}"
            agg = _aggregate_cells(per_query, key, family)
            if agg is None:
                continue
            table.add(
                spec.label, mode.value, band, agg["n_queries"], agg["n_docs"],
                agg["abnirml"], agg["mean_mrs"], agg["mean_mrs_judged"],
                agg["t"], agg["p"], agg["adjusted_alpha"], agg["significant"],
            )
            if artifacts is not None:
                _save_triples(artifacts / f"rq1_{spec.label}_{mode.value.replace(':', '-')}_{band}.csv",
                              per_query, key)
            for qid in sorted(per_query):
                cell = per_query[qid].get(key)
                if cell is None:
                    continue
                for doc_id, dist, shift in cell.distances:
                    distance.add(spec.label, mode.value, band, qid, doc_id, dist, shift)

    report.tables["positional"] = table
    report.figures["mrs_by_distance"] = distance
    if out_dir is not None:
        write_report(report, cfg, out_dir)
    return report


# ---------------------------------------------------------------------------
# RQ-1 contextual study
# ---------------------------------------------------------------------------

def _generated_span_lookup(cfg: StudyConfig, ctx: _StudyContext) -> dict[tuple[str, str], str]:
    """Spans per (doc_id, entity): precomputed file, wire adapter, or HTTP."""
    gen = cfg.generator
    needed = sorted({
        (e.doc_id, entity)
        for qid in ctx.qids()
        for e in ctx.run.top_k(qid, cfg.top_k)
        for entity in cfg.entities
    })
    if gen.spans:
        table = {(d, i): s for d, i, s in load_spans(gen.spans)}
        missing = [pair for pair in needed if pair not in table]
        if missing:
            raise StudyError(f"generated spans file lacks {len(missing)} pairs, first: {missing[0]}")
        return {pair: truncate_to_first_sentence(table[pair]) for pair in needed}
    if gen.command:
        out: dict[tuple[str, str], str] = {}
        with AdapterSession(gen.command) as session:
            for doc_id, entity in needed:
                prompt = build_prompt(ctx.docs[doc_id].text, entity)
                out[(doc_id, entity)] = generate_span(GenerationRequest(prompt), session)
        return out
    if gen.http_url:
        client = HttpGenerator(gen.http_url, model=gen.model)
        return {
            (doc_id, entity): generate_span(
                GenerationRequest(build_prompt(ctx.docs[doc_id].text, entity)), client
            )
            for doc_id, entity in needed
        }
    raise StudyError("contextual study needs generator.spans, generator.command, or generator.http_url")


def run_contextual_study(cfg: StudyConfig, out_dir: str | Path | None = None) -> StudyReport:
    """Static versus document-conditioned spans per scorer x mode."""
    if not cfg.entities:
        raise StudyError("contextual study needs at least one entity")
    for entity in cfg.entities:
        if entity not in cfg.static_spans:
            raise StudyError(f"entity {entity!r} has no static span configured")
    ctx = _StudyContext(cfg)
    report = StudyReport("rq1-context")
    generated = _generated_span_lookup(cfg, ctx)
    static = {e: truncate_to_first_sentence(cfg.static_spans[e]) for e in cfg.entities}

    table = Table([
        "scorer", "mode", "n_queries", "n_docs",
        "abnirml_static", "abnirml_generated", "mean_mrs_static", "mean_mrs_generated",
        "t", "p", "adjusted_alpha", "significant",
    ])
    family = cfg.family_size or (len(cfg.scorers) * len(cfg.modes))
    artifacts = None
    if out_dir is not None:
        artifacts = Path(out_dir) / "artifacts"
        artifacts.mkdir(parents=True, exist_ok=True)
        save_spans(
            sorted((d, e, s) for (d, e), s in generated.items()),
            artifacts / "generated_spans.tsv",
        )

    for spec in cfg.scorers:
        pool = ScorerPool(spec, ctx.stats)
        try:
            def work(qid: str) -> dict[str, _CellStats]:
                handle = pool.handle()
                orig_slice = rerank(ctx.queries[qid], ctx.candidates(qid), handle)
                orig_scores = {e.doc_id: e.score for e in orig_slice}
                query = ctx.queries[qid]
                out: dict[str, _CellStats] = {}
                for mode in cfg.modes:
                    for source in ("static", "generated"):
                        cell = _CellStats()
                        for entity in cfg.entities:
                            for doc in ctx.candidates(qid):
                                span = (
                                    static[entity] if source == "static"
                                    else generated[(doc.doc_id, entity)]
                                )
                                aug = inject(ctx.seg(doc.doc_id), span, mode,
                                             profile=ctx.profile(doc.doc_id))
                                s_aug = handle.score_batch(query, [aug])[0]
                                s_orig = orig_scores[doc.doc_id]
                                cell.triples.append((doc.doc_id, s_orig, s_aug))
                                cell.shifts.append(mean_rank_shift(orig_slice, doc.doc_id, s_aug))
                        out[f"{mode.value}|{source}"] = cell
                return out

            per_query = ctx.map_queries(work)
        except (ScorerError, AdapterError) as exc:
            report.errors.append(f"scorer {spec.label}: {exc}")
            continue
        finally:
            pool.close()

        for mode in cfg.modes:
            key_s, key_g = f"{mode.value}|static", f"{mode.value}|generated"
            agg_s = _aggregate_cells(per_query, key_s, family)
            agg_g = _aggregate_cells(per_query, key_g, family)
            if agg_s is None or agg_g is None:
                continue
            # paired per-query contrast: does contextualisation change the score drop?
            contrast = [
                per_query[qid][key_s].mean_delta() - per_query[qid][key_g].mean_delta()
                for qid in sorted(per_query)
                if key_s in per_query[qid] and key_g in per_query[qid]
            ]
            sig = paired_t_test(contrast, family_size=family) if len(contrast) >= 2 else None
            table.add(
                spec.label, mode.value, agg_s["n_queries"], agg_s["n_docs"],
                agg_s["abnirml"], agg_g["abnirml"], agg_s["mean_mrs"], agg_g["mean_mrs"],
                sig.t_statistic if sig else None, sig.p_value if sig else None,
                sig.adjusted_alpha if sig else None, sig.significant if sig else None,
            )
            if artifacts is not None:
                safe_mode = mode.value.replace(":", "-")
                _save_triples(artifacts / f"rq1c_{spec.label}_{safe_mode}_static.csv", per_query, key_s)
                _save_triples(artifacts / f"rq1c_{spec.label}_{safe_mode}_generated.csv", per_query, key_g)

    report.tables["contextual"] = table
    if out_dir is not None:
        write_report(report, cfg, out_dir)
    return report


# ---------------------------------------------------------------------------
# RQ-2: mitigation study
# ---------------------------------------------------------------------------

def _oracle_verdict(doc_id: str) -> PromotionVerdict:
    prob = 1.0 if "::" in doc_id else 0.0
    return PromotionVerdict(doc_id, (prob,), prob)


def run_mitigation_study(cfg: StudyConfig, out_dir: str | Path | None = None) -> StudyReport:
    """Pseudo-corpus ranking, classifier fusion over the alpha grid, and
    nDCG@10 / MRR / MRPR at the tuned alpha, aggregated over entities."""
    if not cfg.entities:
        raise StudyError("mitigation study needs at least one entity")
    for entity in cfg.entities:
        if entity not in cfg.static_spans:
            raise StudyError(f"entity {entity!r} has no static span configured")
    ctx = _StudyContext(cfg)
    report = StudyReport("rq2")

    grid = sorted(set(float(a) for a in cfg.alpha_grid) | {1.0})
    sweep_table = Table(["scorer", "entity", "alpha", "ndcg10", "mrr", "mrpr"])
    summary = Table([
        "scorer", "best_alpha", "ndcg10_baseline", "ndcg10_best", "ndcg10_delta",
        "mrr_baseline", "mrr_best", "mrpr_baseline", "mrpr_best",
        "n_queries", "t", "p", "adjusted_alpha", "significant",
    ])
    family = cfg.family_size or len(cfg.scorers)
    artifacts = None
    if out_dir is not None:
        artifacts = Path(out_dir) / "artifacts"
        artifacts.mkdir(parents=True, exist_ok=True)

    for spec in cfg.scorers:
        pool = ScorerPool(spec, ctx.stats)
        clf_pool = ClassifierPool(cfg.classifier, tuple(cfg.entities))
        scorer_failed = False
        # per entity -> alpha -> qid -> (ndcg, rr, rpr); plus fused/base runs
        entity_metrics: dict[str, dict[float, dict[str, tuple[float, float, float]]]] = {}
        verdict_dump: list[tuple[str, str, float]] = []

        try:
            for entity in cfg.entities:
                span = truncate_to_first_sentence(cfg.static_spans[entity])

                def work(qid: str):
                    handle = pool.handle()
                    query = ctx.queries[qid]
                    pseudo = build_pseudo_corpus(
                        ctx.candidates(qid), span, cfg.rq2_mode, provider=ctx.provider
                    )
                    ranked = rerank(query, pseudo, handle)
                    augmented_ids = {d.doc_id for d in pseudo if isinstance(d, AugmentedDocument)}
                    if cfg.classifier.kind == "oracle":
                        verdicts = {d.doc_id: _oracle_verdict(d.doc_id) for d in pseudo}
                    else:
                        clf = clf_pool.classifier()
                        verdicts = {
                            d.doc_id: promotion_probability(
                                segment(d.to_document() if isinstance(d, AugmentedDocument) else d),
                                clf, cfg.fusion,
                            )
                            for d in pseudo
                        }
                    per_alpha: dict[float, tuple[float, float, float]] = {}
                    for alpha in grid:
                        fused = fuse_scores(ranked, verdicts, alpha)
                        run_slice = Run({qid: fused})
                        per_alpha[alpha] = (
                            ndcg_at_k(run_slice, ctx.qrels, k=10),
                            mrr(run_slice, ctx.qrels, rel_threshold=2, cutoff=cfg.mrr_cutoff),
                            mrpr(run_slice, augmented_ids, cutoff=cfg.mrr_cutoff),
                        )
                    return per_alpha, ranked, verdicts

                try:
                    results = ctx.map_queries(work)
                except (ScorerError, AdapterError) as exc:
                    report.errors.append(f"scorer {spec.label} / entity {entity}: {exc}")
                    scorer_failed = True
                    break

                entity_metrics[entity] = {
                    alpha: {qid: results[qid][0][alpha] for qid in sorted(results)}
                    for alpha in grid
                }
                if artifacts is not None:
                    safe = entity.replace(" ", "_")
                    base_run = Run({qid: results[qid][1] for qid in sorted(results)})
                    save_run(base_run, artifacts / f"rq2_{spec.label}_{safe}_baseline.trec", tag=spec.label)
                    for qid in sorted(results):
                        for doc_id in sorted(results[qid][2]):
                            verdict_dump.append((entity, doc_id, results[qid][2][doc_id].prob))
        finally:
            pool.close()
            clf_pool.close()
        if scorer_failed:
            continue

        # aggregate over queries then entities
        def agg(alpha: float, idx: int) -> float:
            per_entity = []
            for entity in cfg.entities:
                vals = [v[idx] for v in entity_metrics[entity][alpha].values()]
                per_entity.append(sum(vals) / len(vals))
            return sum(per_entity) / len(per_entity)

        for entity in cfg.entities:
            for alpha in grid:
                vals = entity_metrics[entity][alpha]
                n = len(vals)
                sweep_table.add(
                    spec.label, entity, alpha,
                    sum(v[0] for v in vals.values()) / n,
                    sum(v[1] for v in vals.values()) / n,
                    sum(v[2] for v in vals.values()) / n,
                )
        for alpha in grid:
            sweep_table.add(spec.label, "ALL", alpha, agg(alpha, 0), agg(alpha, 1), agg(alpha, 2))

        best_alpha, _ = tune_alpha(grid, lambda a: agg(a, 0))
        # per-query nDCG contrast between tuned and disabled mitigation,
        # averaged over entities, drives the significance test
        qids = ctx.qids()
        deltas = []
        for qid in qids:
            best_vals = [entity_metrics[e][best_alpha][qid][0] for e in cfg.entities]
            base_vals = [entity_metrics[e][1.0][qid][0] for e in cfg.entities]
            deltas.append(sum(best_vals) / len(best_vals) - sum(base_vals) / len(base_vals))
        sig = paired_t_test(deltas, family_size=family) if len(deltas) >= 2 else None

        summary.add(
            spec.label, best_alpha,
            agg(1.0, 0), agg(best_alpha, 0), agg(best_alpha, 0) - agg(1.0, 0),
            agg(1.0, 1), agg(best_alpha, 1),
            agg(1.0, 2), agg(best_alpha, 2),
            len(qids),
            sig.t_statistic if sig else None, sig.p_value if sig else None,
            sig.adjusted_alpha if sig else None, sig.significant if sig else None,
        )
        if artifacts is not None and verdict_dump:
            with open(artifacts / f"rq2_{spec.label}_verdicts.csv", "w",
                      encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["entity", "doc_id", "prob"])
                for entity, doc_id, prob in verdict_dump:
                    writer.writerow([entity, doc_id, f"{prob:.6f}"])

    report.tables["mitigation"] = summary
    report.figures["alpha_sweep"] = sweep_table
    if out_dir is not None:
        write_report(report, cfg, out_dir)
    return report
