from pathlib import Path

import pytest

from bleed.corpus import Document, Query, Run, RunEntry, save_corpus, save_run


class Workspace:
    """Synthetic two-topic corpus with graded judgments and a candidate run.

    Every document contains at least one of its own query's terms, query
    vocabularies are disjoint, and first sentences double as span sources.
    """

    def __init__(self, root: Path, docs_per_query: int = 6):
        self.root = root
        self.vocab = {"q1": ("alpha", "bravo"), "q2": ("charlie", "delta")}
        self.queries = [Query("q1", "alpha bravo"), Query("q2", "charlie delta")]
        docs = []
        run = {}
        qrels_rows = []
        for qid, terms in self.vocab.items():
            entries = []
            for i in range(docs_per_query):
                doc_id = f"d{qid[1]}{i:02d}"
                # term frequency varies by i so scores are distinct
                body = f"Topic {terms[0]} {'filler ' * (i % 3)}words here. "
                body += f"Then {terms[1]} appears {'again ' * (i % 2)}in context. "
                body += "Closing neutral sentence ends it."
                docs.append(Document(doc_id, body.strip()))
                entries.append(RunEntry(doc_id, float(docs_per_query - i), i + 1))
                grade = (3, 2, 1, 0)[i % 4]
                qrels_rows.append(f"{qid} 0 {doc_id} {grade}")
            run[qid] = entries
        self.docs = {d.doc_id: d for d in docs}

        self.corpus = root / "corpus.tsv"
        self.queries_path = root / "queries.tsv"
        self.qrels = root / "qrels.txt"
        self.run = root / "candidates.trec"
        save_corpus(docs, self.corpus)
        self.queries_path.write_text(
            "".join(f"{q.query_id}\t{q.text}\n" for q in self.queries), encoding="utf-8"
        )
        self.qrels.write_text("\n".join(qrels_rows) + "\n", encoding="utf-8")
        save_run(Run(run), self.run, tag="seed")

    def config_text(self, **overrides) -> str:
        lines = [
            f'corpus = "{self.corpus.name}"',
            f'queries = "{self.queries_path.name}"',
            f'qrels = "{self.qrels.name}"',
            f'run = "{self.run.name}"',
            "top_k = 6",
            "seed = 42",
        ]
        for key, value in overrides.items():
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


@pytest.fixture()
def workspace(tmp_path):
    return Workspace(tmp_path)
