import math
from collections import Counter

import numpy as np
import pytest

from eventlink.extraction import EventQuery, Span
from eventlink.kb import KBEntry, KnowledgeBase
from eventlink.retrieval import bm25_build, bm25_query_terms, bm25_retrieve

# Hand-computed Okapi scores (k1=1.2, b=0.75) for the five-document
# fixture below; documents include the title separator token.
FIVE_DOC_EXPECTED = {
    ("beta", "gamma"): {
        "F0": 1.1387566988339866,
        "F1": 0.7693433832743011,
        "F2": 0.5693783494169933,
        "F3": 0.8883785972988264,
        "F4": 0.0,
    },
    ("beta",): {
        "F0": 0.5693783494169933,
        "F1": 0.7693433832743011,
        "F2": 0.0,
        "F3": 0.4441892986494132,
        "F4": 0.0,
    },
    ("beta", "beta"): {
        "F0": 1.1387566988339866,
        "F1": 1.5386867665486021,
        "F2": 0.0,
        "F3": 0.8883785972988264,
        "F4": 0.0,
    },
    ("epsilon", "zeta"): {
        "F0": 0.0,
        "F1": 0.0,
        "F2": 0.9248166620064163,
        "F3": 1.8639285469507132,
        "F4": 0.0,
    },
}


@pytest.fixture
def five_doc_kb():
    return KnowledgeBase(
        [
            KBEntry("F0", "alpha", "beta gamma"),
            KBEntry("F1", "beta", "beta delta"),
            KBEntry("F2", "gamma delta", "epsilon"),
            KBEntry("F3", "zeta", "alpha beta gamma delta epsilon"),
            KBEntry("F4", "eta", "theta iota"),
        ]
    )


@pytest.fixture
def two_doc_kb():
    return KnowledgeBase(
        [
            KBEntry("D1", "a", "b"),
            KBEntry("D2", "b", "c"),
        ]
    )


def _oracle_scores(kb, terms, k1=1.2, b=0.75):
    # independent Okapi implementation: plain loops over the formula
    docs = [entry.title.split() + ["[TITLE_SEP]"] + entry.description.split() for entry in kb]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    df = Counter()
    for doc in docs:
        for term in set(doc):
            df[term] += 1
    out = []
    for doc in docs:
        tf = Counter(doc)
        score = 0.0
        for term in terms:
            if df[term] == 0:
                continue
            idf = math.log(1.0 + (n - df[term] + 0.5) / (df[term] + 0.5))
            f = tf.get(term, 0)
            score += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len(doc) / avgdl))
        out.append(score)
    return out


def test_five_doc_fixture_matches_frozen_values(five_doc_kb):
    index = bm25_build(five_doc_kb)
    for terms, expected in FIVE_DOC_EXPECTED.items():
        scores = index.scores(list(terms))
        for position, entry_id in enumerate(index.ids):
            assert scores[position] == pytest.approx(expected[entry_id], abs=1e-9), (
                terms, entry_id,
            )


def test_five_doc_fixture_matches_independent_oracle(five_doc_kb):
    index = bm25_build(five_doc_kb)
    for terms in (["beta", "gamma"], ["beta"], ["delta", "delta", "alpha"], ["iota"]):
        np.testing.assert_allclose(
            index.scores(terms), _oracle_scores(five_doc_kb, terms), atol=1e-9
        )


def test_two_doc_equal_scores_tie_to_first(two_doc_kb):
    index = bm25_build(two_doc_kb)
    scores = index.scores(["b"])
    assert scores[0] == pytest.approx(math.log(1.2), abs=1e-9)
    assert scores[1] == pytest.approx(math.log(1.2), abs=1e-9)
    query = EventQuery("q", ("b",), Span(0, 0))
    result = bm25_retrieve(index, query, 1)
    assert result.ids == ("D1",)


def test_duplicate_query_term_doubles_contribution(two_doc_kb):
    index = bm25_build(two_doc_kb)
    single = index.scores(["b"])
    double = index.scores(["b", "b"])
    np.testing.assert_allclose(double, 2 * single, atol=1e-12)


def test_zero_overlap_scores_exactly_zero(five_doc_kb):
    index = bm25_build(five_doc_kb)
    query = EventQuery("q", ("missing", "words"), Span(0, 0))
    result = bm25_retrieve(index, query, 5)
    assert all(s == 0.0 for s in result.scores)
    assert result.ids == ("F0", "F1", "F2", "F3", "F4")


def test_scores_nonnegative_and_zero_iff_no_overlap(five_doc_kb):
    index = bm25_build(five_doc_kb)
    texts = {entry.id: set(entry.title.split() + entry.description.split()) for entry in five_doc_kb}
    for terms in (["alpha"], ["beta", "eta"], ["theta", "zeta", "zeta"]):
        scores = index.scores(terms)
        for position, entry_id in enumerate(index.ids):
            assert scores[position] >= 0.0
            overlap = bool(set(terms) & texts[entry_id])
            assert (scores[position] > 0.0) == overlap


def test_query_window_is_mention_centered():
    tokens = tuple(f"t{i}" for i in range(40))
    query = EventQuery("q", tokens, Span(20, 20))
    kb = KnowledgeBase([KBEntry("E0", "x", "y")])
    index = bm25_build(kb)
    window = bm25_query_terms(index, query)
    assert len(window) == 16
    assert "t20" in window
    # left-heavy split around the mention
    assert window[0] == "t12" and window[-1] == "t27"


def test_k_bounds(five_doc_kb):
    index = bm25_build(five_doc_kb)
    query = EventQuery("q", ("beta",), Span(0, 0))
    with pytest.raises(ValueError):
        bm25_retrieve(index, query, 6)


def test_parameter_validation(five_doc_kb):
    with pytest.raises(ValueError):
        bm25_build(five_doc_kb, k1=0.0)
    with pytest.raises(ValueError):
        bm25_build(five_doc_kb, b=1.5)
