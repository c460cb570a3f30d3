"""First-stage retrieval: exact dense top-k by dot product, plus Okapi BM25.

Both retrievers rank every KB entry and break score ties by KB position,
so any (index, query, k) triple has exactly one correct answer. Search is
exact; no approximation is applied at any scale this package targets.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoders import EncoderAdapter, encoder_fingerprint
from .extraction import EventQuery
from .formatting import context_window
from .kb import KnowledgeBase, candidate_text, full_candidate_tokens

BM25_K1 = 1.2
BM25_B = 0.75
BM25_WINDOW = 16


@dataclass(frozen=True)
class CandidateSet:
    """Ranked top-k entries for one query: distinct ids, non-increasing scores."""

    query_id: str
    ids: tuple[str, ...]
    scores: tuple[float, ...]
    gold_injected: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(self.ids) != len(self.scores):
            raise ValueError("ids and scores must align")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("candidate ids must be distinct")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.ids)

    def to_record(self) -> dict:
        record = {
            "query_id": self.query_id,
            "candidates": [{"id": i, "score": s} for i, s in zip(self.ids, self.scores)],
        }
        if self.gold_injected:
            record["gold_injected"] = True
        return record

    @classmethod
    def from_record(cls, record: dict) -> "CandidateSet":
        return cls(
            query_id=str(record["query_id"]),
            ids=tuple(c["id"] for c in record["candidates"]),
            scores=tuple(float(c["score"]) for c in record["candidates"]),
            gold_injected=bool(record.get("gold_injected", False)),
        )


@dataclass
class DenseIndex:
    """Entry ids aligned with an (n, d) embedding matrix."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    encoder_fingerprint: str

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def save(self, path) -> None:
        payload = {
            "format_version": 1,
            "encoder_fingerprint": self.encoder_fingerprint,
            "ids": list(self.ids),
            "matrix": self.matrix.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "DenseIndex":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            ids=tuple(payload["ids"]),
            matrix=np.array(payload["matrix"], dtype=float),
            encoder_fingerprint=str(payload["encoder_fingerprint"]),
        )


def build_index(kb: KnowledgeBase, encoder: EncoderAdapter, max_len: int = 300) -> DenseIndex:
    """Encode every entry's candidate text into one index row, in KB order."""
    if kb.n == 0:
        raise ValueError("cannot index an empty knowledge base")
    rows = [np.asarray(encoder.encode(candidate_text(e, max_len)), dtype=float) for e in kb]
    return DenseIndex(
        ids=kb.ids,
        matrix=np.stack(rows),
        encoder_fingerprint=encoder_fingerprint(encoder),
    )


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on negated scores: ties keep ascending KB position
    return np.argsort(-scores, kind="stable")[:k]


def retrieve(index: DenseIndex, query_embedding: np.ndarray, k: int, query_id: str = "") -> CandidateSet:
    """Exact top-k by dot product; ties broken toward lower KB position."""
    q = np.asarray(query_embedding, dtype=float)
    if q.shape != (index.dim,):
        raise ValueError(f"query dimension {q.shape} does not match index ({index.dim},)")
    if not 1 <= k <= index.n:
        raise ValueError(f"k={k} outside [1, {index.n}]")
    # per-row reduction, not matmul: blocked BLAS kernels can round
    # bit-identical rows differently, breaking the exact tie rule
    scores = np.array([np.dot(row, q) for row in index.matrix])
    order = _top_k(scores, k)
    return CandidateSet(
        query_id=query_id,
        ids=tuple(index.ids[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
    )


@dataclass
class BM25Index:
    """Okapi BM25 statistics over candidate texts.

    Query terms are drawn from a fixed-width context window centered on
    the event mention.
    """

    ids: tuple[str, ...]
    doc_lens: list[int]
    avgdl: float
    postings: dict[str, list[tuple[int, int]]]
    df: dict[str, int]
    k1: float = BM25_K1
    b: float = BM25_B
    window: int = BM25_WINDOW

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")

    @property
    def n(self) -> int:
        return len(self.ids)

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.n - df + 0.5) / (df + 0.5))

    def scores(self, terms: Sequence[str]) -> np.ndarray:
        out = np.zeros(self.n)
        for term in terms:
            idf = self.idf(term)
            if idf == 0.0:
                continue
            for doc, tf in self.postings[term]:
                norm = tf + self.k1 * (1.0 - self.b + self.b * self.doc_lens[doc] / self.avgdl)
                out[doc] += idf * tf * (self.k1 + 1.0) / norm
        return out


def bm25_build(
    kb: KnowledgeBase, k1: float = BM25_K1, b: float = BM25_B, window: int = BM25_WINDOW
) -> BM25Index:
    """Index candidate texts (title, separator, description) for BM25."""
    if kb.n == 0:
        raise ValueError("cannot index an empty knowledge base")
    doc_lens: list[int] = []
    postings: dict[str, list[tuple[int, int]]] = {}
    for position, entry in enumerate(kb):
        tokens = full_candidate_tokens(entry)
        doc_lens.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((position, tf))
    df = {term: len(rows) for term, rows in postings.items()}
    avgdl = sum(doc_lens) / len(doc_lens)
    return BM25Index(
        ids=kb.ids, doc_lens=doc_lens, avgdl=avgdl, postings=postings, df=df,
        k1=k1, b=b, window=window,
    )


def bm25_query_terms(index: BM25Index, query: EventQuery) -> list[str]:
    """The mention-centered context window feeding BM25 scoring."""
    return context_window(query.tokens, query.mention, index.window)


def bm25_retrieve(index: BM25Index, query: EventQuery, k: int) -> CandidateSet:
    """Okapi BM25 top-k with the same KB-position tie rule as dense retrieval."""
    if not 1 <= k <= index.n:
        raise ValueError(f"k={k} outside [1, {index.n}]")
    scores = index.scores(bm25_query_terms(index, query))
    order = _top_k(scores, k)
    return CandidateSet(
        query_id=query.query_id,
        ids=tuple(index.ids[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
    )
