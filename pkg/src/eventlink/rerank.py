"""Second-stage re-ranking: cross-scoring with a learned out-of-KB option.

A cross scorer maps a (query tokens, candidate tokens) pair to a scalar.
The scorer also owns a learned embedding standing in for the reserved
out-of-KB pseudo-candidate, so selection becomes a (k+1)-way argmax with
index 0 meaning "not in the KB". The thresholded baseline and an
LLM-as-reranker baseline share the same decision record.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .encoders import CHECKPOINT_VERSION, TinyEncoder, fingerprint
from .kb import NIL, KBError, KnowledgeBase, candidate_text, tokenize
from .llm import TextCompletionClient
from .retrieval import CandidateSet

NIL_PSEUDO_TOKEN = "[NIL]"

RULE_LEARNED = "learned_nil"
RULE_THRESHOLD = "threshold"
RULE_LLM = "llm"

DEFAULT_THETA = 0.5
RERANK_POOL_SIZE = 10
PROMPT_DESCRIPTION_TOKENS = 50

NIL_ANSWER_SENTENCE = "The passage should be labeled as NIL."


@runtime_checkable
class CrossScorer(Protocol):
    """Pair scorer with a learned out-of-KB score.

    ``nil_score`` must depend only on the query representation and the
    learned embedding, never on the retrieved candidates. Joint-encoding
    implementations serialize a pair as query tokens, ``[SEP]``, candidate
    tokens.
    """

    trainable: bool

    def score(self, query_tokens: Sequence[str], candidate_tokens: Sequence[str]) -> float: ...

    def nil_score(self, query_tokens: Sequence[str]) -> float: ...


class TinyCrossScorer:
    """Desk-scale cross scorer: shared tiny encoder on both pair sides.

    S(q, c) is a learned-scale dot product of the two encodings; the
    out-of-KB score replaces the candidate encoding with the learned
    embedding (unit-normalized). A joint pair encoder can be slotted in
    behind the same protocol.
    """

    trainable = True

    def __init__(self, vocab: Sequence[str], dim: int, seed: int = 0):
        root = np.random.SeedSequence(seed)
        enc_seed, nil_seed = root.spawn(2)
        self.encoder = TinyEncoder(vocab, dim, rng=np.random.default_rng(enc_seed))
        rng = np.random.default_rng(nil_seed)
        self.nil_embedding = rng.normal(0.0, 1.0 / np.sqrt(dim), dim)
        self.scale = np.array([10.0])

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def params(self) -> dict[str, np.ndarray]:
        out = self.encoder.params()
        out["nil"] = self.nil_embedding
        out["scale"] = self.scale
        return out

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params().items()}

    def score(self, query_tokens: Sequence[str], candidate_tokens: Sequence[str]) -> float:
        q = self.encoder.encode(query_tokens)
        c = self.encoder.encode(candidate_tokens)
        return float(self.scale[0] * (q @ c))

    def nil_score(self, query_tokens: Sequence[str]) -> float:
        q = self.encoder.encode(query_tokens)
        nil_unit = self.nil_embedding / np.linalg.norm(self.nil_embedding)
        return float(self.scale[0] * (q @ nil_unit))

    def state_dict(self) -> dict:
        state = self.encoder.state_dict()
        state["kind"] = "tiny_cross"
        state["format_version"] = CHECKPOINT_VERSION
        state["nil"] = self.nil_embedding.tolist()
        state["scale"] = self.scale.tolist()
        return state

    @classmethod
    def from_state_dict(cls, state: dict) -> "TinyCrossScorer":
        scorer = cls.__new__(cls)
        scorer.encoder = TinyEncoder.from_state_dict(state)
        scorer.nil_embedding = np.array(state["nil"], dtype=float)
        scorer.scale = np.array(state["scale"], dtype=float)
        return scorer

    def save(self, path) -> str:
        import json

        state = self.state_dict()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(state, sort_keys=True))
        return fingerprint(state)

    @classmethod
    def load(cls, path) -> "TinyCrossScorer":
        import json

        with open(path, encoding="utf-8") as fh:
            state = json.load(fh)
        if state.get("kind") != "tiny_cross":
            raise ValueError(f"not a cross-scorer checkpoint: kind={state.get('kind')!r}")
        return cls.from_state_dict(state)


@dataclass(frozen=True)
class LinkDecision:
    """One linking verdict: a KB id or NIL, with the (k+1)-length score vector."""

    query_id: str
    prediction: str
    scores: tuple[float, ...]
    rule: str
    note: str | None = None

    def to_record(self) -> dict:
        record = {
            "query_id": self.query_id,
            "prediction": self.prediction,
            "rule": self.rule,
            "scores": list(self.scores),
        }
        if self.note:
            record["note"] = self.note
        return record

    @classmethod
    def from_record(cls, record: dict) -> "LinkDecision":
        return cls(
            query_id=str(record["query_id"]),
            prediction=str(record["prediction"]),
            scores=tuple(float(s) for s in record["scores"]),
            rule=str(record["rule"]),
            note=record.get("note"),
        )


def score_pairs(
    scorer: CrossScorer,
    query_tokens: Sequence[str],
    candidates: CandidateSet,
    kb: KnowledgeBase,
    max_candidate_len: int = 256,
) -> np.ndarray:
    """Score the k+1 options for one query: index 0 is the out-of-KB score."""
    scores = np.empty(len(candidates) + 1)
    scores[0] = scorer.nil_score(query_tokens)
    for i, cid in enumerate(candidates.ids, start=1):
        entry = kb.get(cid)
        if entry is None:
            raise KBError(f"candidate id {cid!r} not found in the KB")
        scores[i] = scorer.score(query_tokens, candidate_text(entry, max_candidate_len))
    return scores


def select_learned_nil(scores: np.ndarray, candidates: CandidateSet) -> LinkDecision:
    """Argmax over all k+1 scores; ties go to the lower index (NIL first)."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(candidates) + 1,):
        raise ValueError("score vector must have length k+1")
    best = int(np.argmax(scores))
    prediction = NIL if best == 0 else candidates.ids[best - 1]
    return LinkDecision(
        query_id=candidates.query_id,
        prediction=prediction,
        scores=tuple(float(s) for s in scores),
        rule=RULE_LEARNED,
    )


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores)
    exp = np.exp(shifted)
    return exp / exp.sum()


def select_threshold(
    candidate_scores: np.ndarray,
    candidates: CandidateSet,
    theta: float = DEFAULT_THETA,
    direction: str = "conventional",
) -> LinkDecision:
    """Threshold rule over softmax-normalized candidate scores.

    ``conventional`` outputs NIL when the normalized max falls below
    theta; ``literal`` applies the opposite inequality (keeping the
    candidate only below theta). Index 0 of the stored score vector is a
    filler zero, as no out-of-KB score exists under this rule.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if direction not in ("conventional", "literal"):
        raise ValueError(f"unknown threshold direction {direction!r}")
    candidate_scores = np.asarray(candidate_scores, dtype=float)
    if candidate_scores.shape != (len(candidates),):
        raise ValueError("candidate score vector must have length k")
    probs = softmax(candidate_scores)
    best = int(np.argmax(probs))
    p = float(probs[best])
    if direction == "conventional":
        prediction = candidates.ids[best] if p >= theta else NIL
    else:
        prediction = candidates.ids[best] if p < theta else NIL
    return LinkDecision(
        query_id=candidates.query_id,
        prediction=prediction,
        scores=(0.0, *(float(x) for x in probs)),
        rule=RULE_THRESHOLD,
    )


def _load_prompt(name: str) -> str:
    return resources.files("eventlink.prompts").joinpath(name).read_text(encoding="utf-8")


def rerank_prompt_template(allow_nil: bool) -> str:
    return _load_prompt("rerank_nil.txt" if allow_nil else "rerank.txt")


def build_rerank_prompt(
    passage: str,
    candidates: CandidateSet,
    kb: KnowledgeBase,
    allow_nil: bool,
) -> str:
    """Fill the re-ranking prompt with the 10 candidate documents."""
    if len(candidates) != RERANK_POOL_SIZE:
        raise ValueError(f"re-ranking prompts require exactly {RERANK_POOL_SIZE} candidates")
    lines = []
    for i, cid in enumerate(candidates.ids, start=1):
        entry = kb.get(cid)
        if entry is None:
            raise KBError(f"candidate id {cid!r} not found in the KB")
        description = " ".join(tokenize(entry.description)[:PROMPT_DESCRIPTION_TOKENS])
        lines.append(f"Document {i}: {entry.title}")
        lines.append(description)
    lines.append(f"Short passage containing an event: {passage}")
    template = rerank_prompt_template(allow_nil)
    return template.replace("{actual input}", "\n".join(lines))


def parse_rerank_completion(
    completion: str, candidates: CandidateSet, kb: KnowledgeBase, allow_nil: bool
) -> tuple[str, str | None]:
    """Return (prediction, note). Unparseable output falls back to NIL."""
    if allow_nil and NIL_ANSWER_SENTENCE in completion:
        return NIL, None
    titles = {}
    for cid in candidates.ids:
        entry = kb.get(cid)
        if entry is not None:
            titles[entry.title] = cid
    for line in completion.splitlines():
        line = line.strip()
        if not line.lower().startswith("document"):
            continue
        _, _, rest = line.partition(":")
        title = rest.strip()
        if title in titles:
            return titles[title], None
        return NIL, "parse_failure: unknown title"
    return NIL, "parse_failure: no ranked documents found"


def llm_rerank(
    client: TextCompletionClient,
    query_tokens: Sequence[str],
    candidates: CandidateSet,
    kb: KnowledgeBase,
    allow_nil: bool,
) -> LinkDecision:
    """Prompt-based re-ranking baseline; the top-ranked title wins.

    Transport failures propagate (retryable); malformed completions fall
    back to a NIL decision carrying a parse-failure note.
    """
    passage = " ".join(query_tokens)
    prompt = build_rerank_prompt(passage, candidates, kb, allow_nil)
    completion = client.complete(prompt)
    prediction, note = parse_rerank_completion(completion, candidates, kb, allow_nil)
    return LinkDecision(
        query_id=candidates.query_id,
        prediction=prediction,
        scores=(0.0,) * (len(candidates) + 1),
        rule=RULE_LLM,
        note=note,
    )
