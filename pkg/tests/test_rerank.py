import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventlink.kb import NIL, KBEntry, KBError, KnowledgeBase
from eventlink.llm import ScriptedClient
from eventlink.rerank import (
    RULE_LEARNED,
    RULE_LLM,
    RULE_THRESHOLD,
    TinyCrossScorer,
    llm_rerank,
    score_pairs,
    select_learned_nil,
    select_threshold,
    softmax,
)
from eventlink.retrieval import CandidateSet

VOCAB = ["city", "war", "north", "siege", "harbor", "[SEP]", "[M_s]", "[M_e]"]


def _cands(ids, query_id="q"):
    scores = tuple(float(len(ids) - i) for i in range(len(ids)))
    return CandidateSet(query_id=query_id, ids=tuple(ids), scores=scores)


@pytest.fixture
def kb10():
    return KnowledgeBase(
        [KBEntry(f"E{i}", f"Entry {i}", f"description number {i} war city") for i in range(10)]
    )


def test_score_pairs_shape(kb10):
    scorer = TinyCrossScorer(VOCAB, 16, seed=0)
    scores = score_pairs(scorer, ["war", "city"], _cands(["E0", "E1", "E2"]), kb10)
    assert scores.shape == (4,)


def test_score_pairs_permutation_moves_scores_and_keeps_nil(kb10):
    scorer = TinyCrossScorer(VOCAB, 16, seed=0)
    forward = score_pairs(scorer, ["war"], _cands(["E0", "E1", "E2"]), kb10)
    reverse = score_pairs(scorer, ["war"], _cands(["E2", "E1", "E0"]), kb10)
    assert forward[0] == reverse[0]
    np.testing.assert_allclose(forward[1:], reverse[1:][::-1], atol=0)


def test_score_pairs_deterministic(kb10):
    scorer = TinyCrossScorer(VOCAB, 16, seed=0)
    a = score_pairs(scorer, ["war"], _cands(["E0", "E1"]), kb10)
    b = score_pairs(scorer, ["war"], _cands(["E0", "E1"]), kb10)
    np.testing.assert_array_equal(a, b)


def test_score_pairs_unresolvable_id(kb10):
    scorer = TinyCrossScorer(VOCAB, 16, seed=0)
    with pytest.raises(KBError, match="E99"):
        score_pairs(scorer, ["war"], _cands(["E0", "E99"]), kb10)


def test_nil_score_independent_of_candidates(kb10):
    scorer = TinyCrossScorer(VOCAB, 16, seed=1)
    a = score_pairs(scorer, ["war", "city"], _cands(["E0", "E1"]), kb10)
    b = score_pairs(scorer, ["war", "city"], _cands(["E5", "E6", "E7"]), kb10)
    assert a[0] == b[0]


def test_select_learned_nil_argmax():
    assert select_learned_nil(np.array([0.9, 0.2, 0.1, 0.3]), _cands(["a", "b", "c"])).prediction == NIL
    decision = select_learned_nil(np.array([0.1, 0.2, 0.8, 0.3]), _cands(["a", "b", "c"]))
    assert decision.prediction == "b"
    assert decision.rule == RULE_LEARNED
    assert len(decision.scores) == 4


def test_select_learned_nil_tie_to_lower_index():
    assert select_learned_nil(np.array([0.5, 0.5, 0.2, 0.1]), _cands(["a", "b", "c"])).prediction == NIL
    assert select_learned_nil(np.array([0.1, 0.5, 0.5]), _cands(["a", "b"])).prediction == "a"


def test_select_learned_nil_constant_shift_invariance():
    scores = np.array([0.3, 0.7, 0.1])
    cands = _cands(["a", "b"])
    base = select_learned_nil(scores, cands).prediction
    for shift in (-5.0, 3.0, 100.0):
        assert select_learned_nil(scores + shift, cands).prediction == base


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4).filter(lambda xs: len(set(xs)) == 4))
@settings(max_examples=100)
def test_select_learned_nil_permutation_invariance(raw):
    scores = np.array(raw)
    ids = ["a", "b", "c"]
    base = select_learned_nil(scores, _cands(ids)).prediction
    perm = [2, 0, 1]
    permuted_scores = np.array([scores[0]] + [scores[1 + p] for p in perm])
    permuted_ids = [ids[p] for p in perm]
    assert select_learned_nil(permuted_scores, _cands(permuted_ids)).prediction == base


def test_threshold_boundary_keeps_candidate():
    # equal raw scores normalize to 0.5 each; >= theta keeps the argmax
    decision = select_threshold(np.array([1.0, 1.0]), _cands(["a", "b"]), theta=0.5)
    assert decision.prediction == "a"
    assert decision.rule == RULE_THRESHOLD


def test_threshold_directions_disagree():
    scores = np.array([3.0, 0.0])  # normalized max well above 0.5
    cands = _cands(["a", "b"])
    assert select_threshold(scores, cands, 0.5, "conventional").prediction == "a"
    assert select_threshold(scores, cands, 0.5, "literal").prediction == NIL


def test_threshold_below_theta_is_nil():
    scores = np.array([0.1, 0.0, 0.05, 0.02])  # max prob ~0.27
    assert select_threshold(scores, _cands(list("abcd")), 0.5).prediction == NIL


def test_threshold_theta_zero_never_nil():
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = rng.normal(size=5)
        decision = select_threshold(scores, _cands(list("abcde")), theta=0.0)
        assert decision.prediction != NIL


def test_threshold_theta_one_always_nil_unless_prob_one():
    scores = np.array([1.0, 0.5, 0.2])
    assert select_threshold(scores, _cands(list("abc")), theta=1.0).prediction == NIL


def test_threshold_score_vector_has_nil_slot():
    decision = select_threshold(np.array([1.0, 0.0]), _cands(["a", "b"]))
    assert len(decision.scores) == 3
    assert decision.scores[0] == 0.0
    np.testing.assert_allclose(sum(decision.scores[1:]), 1.0, atol=1e-12)


def test_threshold_validation():
    with pytest.raises(ValueError):
        select_threshold(np.array([1.0]), _cands(["a"]), theta=1.5)
    with pytest.raises(ValueError):
        select_threshold(np.array([1.0]), _cands(["a"]), direction="sideways")


def test_softmax_stability():
    probs = softmax(np.array([1000.0, 1000.0]))
    np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-12)


# --- LLM reranking baseline ---------------------------------------------------

def _reverse_completion(kb, ids):
    lines = [f"Document d{i}: {kb.get(cid).title}" for i, cid in enumerate(reversed(ids), 1)]
    return "\n".join(lines)


def test_llm_rerank_parses_reversed_ranking(kb10):
    ids = [f"E{i}" for i in range(10)]
    client = ScriptedClient([_reverse_completion(kb10, ids)])
    decision = llm_rerank(client, ["war"], _cands(ids), kb10, allow_nil=False)
    assert decision.prediction == "E9"
    assert decision.rule == RULE_LLM
    assert decision.note is None
    assert len(decision.scores) == 11


def test_llm_rerank_nil_sentence(kb10):
    ids = [f"E{i}" for i in range(10)]
    client = ScriptedClient(["The passage should be labeled as NIL."])
    decision = llm_rerank(client, ["war"], _cands(ids), kb10, allow_nil=True)
    assert decision.prediction == NIL
    assert decision.note is None


def test_llm_rerank_unknown_title_falls_back_to_nil(kb10):
    ids = [f"E{i}" for i in range(10)]
    client = ScriptedClient(["Document d1: Not A Real Title"])
    decision = llm_rerank(client, ["war"], _cands(ids), kb10, allow_nil=False)
    assert decision.prediction == NIL
    assert "parse_failure" in decision.note


def test_llm_rerank_requires_ten_candidates(kb10):
    client = ScriptedClient(["x"])
    with pytest.raises(ValueError, match="10"):
        llm_rerank(client, ["war"], _cands(["E0", "E1"]), kb10, allow_nil=False)


def test_scorer_checkpoint_round_trip(tmp_path, kb10):
    scorer = TinyCrossScorer(VOCAB, 16, seed=3)
    path = tmp_path / "scorer.json"
    scorer.save(path)
    loaded = TinyCrossScorer.load(path)
    a = score_pairs(scorer, ["war"], _cands(["E0", "E1"]), kb10)
    b = score_pairs(loaded, ["war"], _cands(["E0", "E1"]), kb10)
    np.testing.assert_array_equal(a, b)
