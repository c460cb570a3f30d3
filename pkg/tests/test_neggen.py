import pytest

from eventlink.encoders import TinyEncoder
from eventlink.extraction import Argument, EventQuery, Span, TaggedQuery
from eventlink.kb import NIL
from eventlink.llm import LLMTransportError
from eventlink.neggen import (
    STYLE_ARGUMENT_AWARE,
    STYLE_PLAIN,
    NegativeExample,
    PassageParseError,
    generate_negatives,
    kb_pruning_negatives,
    parse_completion,
    passage_to_tagged,
    sample_filter,
    tagged_passage,
)
from eventlink.retrieval import build_index
from eventlink.toy import StorytellerMock, build_toy_data, build_vocab


def _tagged(tokens, mention, pos="verb", n_args=2, gold="E1"):
    toks = tuple(tokens.split())
    args = []
    positions = [i for i in range(len(toks)) if not mention.overlaps(Span(i, i))]
    for i in positions[:n_args]:
        args.append(Argument(Span(i, i), f"R{i}"))
    base = EventQuery("q", toks, mention, pos=pos, gold=gold)
    return TaggedQuery(base, "Type", tuple(args))


# --- sample_filter -----------------------------------------------------------

def test_filter_keeps_common_verb_with_two_args():
    q = _tagged("Germany invaded the Soviet Union", Span(1, 1), n_args=2)
    assert sample_filter([q]) == [q]


def test_filter_excludes_proper_noun_mention():
    q = _tagged("the battle of Waterloo ended", Span(3, 3), n_args=2)
    assert sample_filter([q]) == []


def test_filter_excludes_numeric_mention():
    q = _tagged("the 1848 revolutions spread", Span(1, 1), n_args=2)
    assert sample_filter([q]) == []


def test_filter_excludes_fewer_than_two_args():
    q = _tagged("Germany invaded the Soviet Union", Span(1, 1), n_args=1)
    assert sample_filter([q]) == []


def test_filter_sentence_initial_capital_is_not_proper_noun():
    q = _tagged("Invasions swept the coast this year", Span(0, 0), n_args=2)
    assert sample_filter([q]) == [q]


def test_filter_idempotent():
    pool = [
        _tagged("Germany invaded the Soviet Union", Span(1, 1), n_args=2),
        _tagged("the battle of Waterloo ended", Span(3, 3), n_args=2),
        _tagged("armies clashed near the river", Span(1, 1), n_args=3),
    ]
    once = sample_filter(pool)
    assert sample_filter(once) == once


# --- parse_completion ---------------------------------------------------------

GOOD_COMPLETION = (
    "Plan 1: swap the details.\n"
    "Following Plan 1, we can generate this passage after Step 1: "
    "<A> Xan </A> <mention> invaded </mention> <B> Yor </B> .\n"
    "Plan 2: polish.\n"
    "Following Plan 2, we can generate this passage after Step 2: "
    "<A> Xan </A> <mention> invaded </mention> <B> Yorland </B> ."
)


def test_parse_two_step_completion():
    parsed = parse_completion(GOOD_COMPLETION, STYLE_ARGUMENT_AWARE)
    assert parsed.accepted
    assert parsed.passage == "<A> Xan </A> <mention> invaded </mention> <B> Yorland </B> ."
    assert parsed.plan_edit == "swap the details."
    assert parsed.plan_polish == "polish."


def test_parse_rejects_missing_mention_tags():
    completion = GOOD_COMPLETION.replace("</mention>", "")
    parsed = parse_completion(completion, STYLE_ARGUMENT_AWARE)
    assert not parsed.accepted
    assert "mention tags" in parsed.reason


def test_parse_rejects_unbalanced_role_tags():
    completion = GOOD_COMPLETION.replace("</B> .", ".")
    parsed = parse_completion(completion, STYLE_ARGUMENT_AWARE)
    assert not parsed.accepted
    assert "unbalanced" in parsed.reason


def test_parse_rejects_unchanged_passage():
    passage = "<A> Xan </A> <mention> invaded </mention> <B> Yorland </B> ."
    parsed = parse_completion(GOOD_COMPLETION, STYLE_ARGUMENT_AWARE, original=passage)
    assert not parsed.accepted
    assert parsed.reason == "unchanged"


def test_parse_rejects_missing_segments():
    parsed = parse_completion("no structure at all", STYLE_ARGUMENT_AWARE)
    assert not parsed.accepted


def test_parse_plain_style():
    parsed = parse_completion(
        "New passage: the fleet <mention> sank </mention> off Qarr .", STYLE_PLAIN
    )
    assert parsed.accepted
    assert parsed.passage == "the fleet <mention> sank </mention> off Qarr ."


# --- passage_to_tagged ----------------------------------------------------------

def test_passage_round_trip(invasion_tagged):
    passage = tagged_passage(invasion_tagged, include_roles=True)
    rebuilt = passage_to_tagged(passage, invasion_tagged, "q::neg")
    assert rebuilt.base.tokens == invasion_tagged.base.tokens
    assert rebuilt.base.mention == invasion_tagged.base.mention
    assert rebuilt.base.gold == NIL
    assert rebuilt.arguments == invasion_tagged.arguments
    assert rebuilt.event_type == invasion_tagged.event_type


def test_passage_to_tagged_rejects_nested_tags(invasion_tagged):
    with pytest.raises(PassageParseError):
        passage_to_tagged("<A> x <B> y </B> z </A> <mention> hit </mention>", invasion_tagged, "n")


def test_passage_to_tagged_rejects_unterminated(invasion_tagged):
    with pytest.raises(PassageParseError):
        passage_to_tagged("<mention> hit </mention> <A> x", invasion_tagged, "n")


# --- generate_negatives ---------------------------------------------------------

@pytest.fixture(scope="module")
def toy_stack():
    data = build_toy_data(n_entries=20, n_train=60, n_test=10, seed=11)
    vocab = build_vocab(data.kb, data.train)
    encoder = TinyEncoder(vocab, 32, seed=1)
    index = build_index(data.kb, encoder, 300)
    return data, encoder, index


def test_generate_negatives_pipeline(toy_stack):
    data, encoder, index = toy_stack
    negatives, records = generate_negatives(
        data.train, data.kb, index, encoder, StorytellerMock(seed=2),
        STYLE_ARGUMENT_AWARE, 12, seed=3,
    )
    assert len(negatives) == 12
    for negative in negatives:
        assert negative.generated.base.gold == NIL
        assert len(negative.paired_candidate_ids) == 10
        assert negative.provenance == STYLE_ARGUMENT_AWARE
        assert len(negative.generated.arguments) >= 2
    assert all(r.status == "accepted" for r in records)
    origin_ids = [n.origin_query_id for n in negatives]
    assert origin_ids == sorted(origin_ids)


def test_generate_negatives_origin_pairing_may_contain_gold(toy_stack):
    data, encoder, index = toy_stack
    negatives, _ = generate_negatives(
        data.train, data.kb, index, encoder, StorytellerMock(seed=2),
        STYLE_ARGUMENT_AWARE, 20, seed=3,
    )
    by_id = {q.base.query_id: q for q in data.train}
    hits = sum(
        by_id[n.origin_query_id].base.gold in n.paired_candidate_ids for n in negatives
    )
    assert hits > 0  # pairing uses the origin query, so its gold can appear


def test_generate_negatives_reproducible(toy_stack):
    data, encoder, index = toy_stack
    first, first_records = generate_negatives(
        data.train, data.kb, index, encoder, StorytellerMock(seed=2),
        STYLE_ARGUMENT_AWARE, 8, seed=9,
    )
    second, second_records = generate_negatives(
        data.train, data.kb, index, encoder, StorytellerMock(seed=2),
        STYLE_ARGUMENT_AWARE, 8, seed=9,
    )
    assert [n.to_record() for n in first] == [n.to_record() for n in second]
    assert [r.to_record() for r in first_records] == [r.to_record() for r in second_records]


class _TagDropper:
    def complete(self, prompt):
        return (
            "Plan 1: x\nFollowing Plan 1, we can generate this passage after Step 1: no tags\n"
            "Plan 2: y\nFollowing Plan 2, we can generate this passage after Step 2: no tags"
        )


def test_generate_negatives_all_rejected(toy_stack):
    data, encoder, index = toy_stack
    negatives, records = generate_negatives(
        data.train, data.kb, index, encoder, _TagDropper(), STYLE_ARGUMENT_AWARE, 5, seed=1,
    )
    assert negatives == []
    assert records and all(r.status == "rejected" for r in records)
    assert all(r.reason == "mention tags removed" for r in records)


class _FlakyClient:
    def __init__(self):
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        raise LLMTransportError("connection reset")


def test_generate_negatives_transport_failures_logged(toy_stack):
    data, encoder, index = toy_stack
    client = _FlakyClient()
    negatives, records = generate_negatives(
        data.train, data.kb, index, encoder, client, STYLE_PLAIN, 3, seed=1, retries=2,
    )
    assert negatives == []
    assert all(r.status == "skipped" for r in records)
    assert client.calls == len(records) * 3


def test_plain_style_negatives_have_no_arguments(toy_stack):
    data, encoder, index = toy_stack
    negatives, _ = generate_negatives(
        data.train, data.kb, index, encoder, StorytellerMock(seed=2), STYLE_PLAIN, 4, seed=3,
    )
    assert len(negatives) == 4
    for negative in negatives:
        assert negative.generated.arguments == ()
        assert negative.provenance == STYLE_PLAIN


def test_negative_example_invariants(invasion_tagged):
    from dataclasses import replace

    nil_query = replace(invasion_tagged, base=replace(invasion_tagged.base, gold=NIL))
    with pytest.raises(ValueError, match="NIL"):
        NegativeExample(invasion_tagged, "q", ("E1",), STYLE_ARGUMENT_AWARE)
    with pytest.raises(ValueError, match="paired"):
        NegativeExample(nil_query, "q", (), STYLE_ARGUMENT_AWARE)
    NegativeExample(nil_query, "q", (), "kb_pruning")  # allowed for pruning


def test_negative_record_round_trip(invasion_tagged):
    from dataclasses import replace

    nil_query = replace(invasion_tagged, base=replace(invasion_tagged.base, gold=NIL))
    negative = NegativeExample(nil_query, "q", ("E1", "E2"), STYLE_ARGUMENT_AWARE)
    assert NegativeExample.from_record(negative.to_record()) == negative


# --- kb_pruning ------------------------------------------------------------------

def test_kb_pruning_exact_ceiling():
    queries = [
        _tagged(f"army {i} moved north this year", Span(2, 2), gold=f"E{i % 10}")
        for i in range(30)
    ]
    pruned, relabeled = kb_pruning_negatives(queries, 0.1, seed=4)
    assert len(pruned) == 1  # ceil(0.1 * 10)
    for before, after in zip(queries, relabeled):
        if before.base.gold in pruned:
            assert after.base.gold == NIL
        else:
            assert after == before


def test_kb_pruning_relabels_exactly_the_pruned(toy_stack):
    data, _, _ = toy_stack
    pruned, relabeled = kb_pruning_negatives(data.train, 0.1, seed=0)
    changed = {
        after.base.query_id
        for before, after in zip(data.train, relabeled)
        if after.base.gold != before.base.gold
    }
    expected = {q.base.query_id for q in data.train if q.base.gold in pruned}
    assert changed == expected


def test_kb_pruning_fraction_bounds():
    with pytest.raises(ValueError):
        kb_pruning_negatives([], 0.0, 0)
    with pytest.raises(ValueError):
        kb_pruning_negatives([], 1.0, 0)
