"""Training loops for the retriever encoder and the cross scorer.

The retriever trains with in-batch negatives: each batch member's gold
candidate is a negative for every other member, and the loss is the mean
cross-entropy of the diagonal over the batch-by-batch logit matrix of dot
products. The cross scorer trains as (k+1)-way classification over
[NIL, c_1..c_k]; synthetic negatives target index 0.

Gradients are analytic (see the encoder modules) and plain SGD applies
them; both loss functions also return their gradients so finite
differences can audit them directly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .encoders import TinyEncoder
from .extraction import TaggedQuery
from .formatting import format_query
from .kb import NIL, KBEntry, KnowledgeBase, candidate_text
from .neggen import NegativeExample
from .rerank import TinyCrossScorer
from .retrieval import CandidateSet, DenseIndex, retrieve


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or violated data contract)."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    learning_rate: float
    batch_size: int
    epochs: int
    max_query_len: int
    max_candidate_len: int
    seed: int = 0
    k: int = 10
    # cap on negatives per positive when subsampling is requested; None
    # uses every provided negative (full-scale runs used roughly 0.1)
    negative_ratio: float | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning rate, batch size, and epochs must be positive")
        if self.max_query_len <= 0 or self.max_candidate_len <= 0 or self.k <= 0:
            raise ValueError("lengths and k must be positive")
        if self.negative_ratio is not None and self.negative_ratio <= 0:
            raise ValueError("negative_ratio must be positive when set")

    @classmethod
    def biencoder_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(
            learning_rate=1e-5, batch_size=48, epochs=15,
            max_query_len=300, max_candidate_len=300, seed=0, k=10,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def crossencoder_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(
            learning_rate=2e-5, batch_size=6, epochs=20,
            max_query_len=256, max_candidate_len=256, seed=0, k=10,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    """Per-epoch losses plus the run's configuration snapshot."""

    epoch_losses: list[float]
    config: dict
    final_metric: float | None = None
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "config": self.config,
            "final_metric": self.final_metric,
            "checkpoint_path": self.checkpoint_path,
        }


def _sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
    for name, grad in grads.items():
        params[name] -= lr * grad


def _softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def biencoder_batch_loss(
    encoder: TinyEncoder,
    query_batches: Sequence[Sequence[str]],
    candidate_batches: Sequence[Sequence[str]],
) -> tuple[float, dict[str, np.ndarray]]:
    """In-batch-negative cross-entropy and its parameter gradients."""
    batch = len(query_batches)
    q_caches, c_caches = [], []
    q_rows, c_rows = [], []
    for tokens in query_batches:
        out, cache = encoder.forward(tokens)
        q_rows.append(out)
        q_caches.append(cache)
    for tokens in candidate_batches:
        out, cache = encoder.forward(tokens)
        c_rows.append(out)
        c_caches.append(cache)
    q_mat = np.stack(q_rows)
    c_mat = np.stack(c_rows)
    logits = q_mat @ c_mat.T
    loss = 0.0
    grad_logits = np.empty_like(logits)
    for i in range(batch):
        probs = _softmax(logits[i])
        loss += -np.log(probs[i])
        grad_row = probs.copy()
        grad_row[i] -= 1.0
        grad_logits[i] = grad_row / batch
    loss /= batch
    grads = encoder.zero_grads()
    grad_q = grad_logits @ c_mat
    grad_c = grad_logits.T @ q_mat
    for i in range(batch):
        encoder.backward(q_caches[i], grad_q[i], grads)
        encoder.backward(c_caches[i], grad_c[i], grads)
    return float(loss), grads


def train_biencoder(
    data: Sequence[tuple[Sequence[str], KBEntry]],
    encoder: TinyEncoder,
    cfg: TrainConfig,
) -> TrainReport:
    """Train the shared retriever encoder on (formatted query, gold entry) pairs."""
    if len(data) < cfg.batch_size:
        raise ValueError(f"need at least {cfg.batch_size} pairs, got {len(data)}")
    rng = np.random.default_rng(cfg.seed)
    params = encoder.params()
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            queries = [data[i][0] for i in chunk]
            golds = [candidate_text(data[i][1], cfg.max_candidate_len) for i in chunk]
            loss, grads = biencoder_batch_loss(encoder, queries, golds)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss!r} at epoch {epoch}, step {start // cfg.batch_size}"
                )
            _sgd_step(params, grads, cfg.learning_rate)
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return TrainReport(epoch_losses=epoch_losses, config=cfg.to_dict())


@dataclass(frozen=True)
class CrossExample:
    """One (k+1)-way classification example for the cross scorer.

    Target 0 means out-of-KB; target i in 1..k points at the i-th
    candidate.
    """

    query_id: str
    query_tokens: tuple[str, ...]
    candidate_ids: tuple[str, ...]
    target: int

    def __post_init__(self) -> None:
        if not 0 <= self.target <= len(self.candidate_ids):
            raise ValueError("target outside [0, k]")


def crossencoder_batch_loss(
    scorer: TinyCrossScorer,
    examples: Sequence[CrossExample],
    kb: KnowledgeBase,
    max_candidate_len: int,
) -> tuple[float, dict[str, np.ndarray]]:
    """(k+1)-way cross-entropy over [NIL, candidates] and its gradients."""
    encoder = scorer.encoder
    grads = scorer.zero_grads()
    nil_norm = np.linalg.norm(scorer.nil_embedding)
    nil_unit = scorer.nil_embedding / nil_norm
    scale = float(scorer.scale[0])
    total = 0.0
    for example in examples:
        q_out, q_cache = encoder.forward(example.query_tokens)
        cand_outs, cand_caches = [], []
        for cid in example.candidate_ids:
            entry = kb.get(cid)
            if entry is None:
                raise TrainingError(f"candidate id {cid!r} not found in the KB")
            out, cache = encoder.forward(candidate_text(entry, max_candidate_len))
            cand_outs.append(out)
            cand_caches.append(cache)
        partners = [nil_unit, *cand_outs]
        raw = np.array([q_out @ p for p in partners])
        logits = scale * raw
        probs = _softmax(logits)
        total += -np.log(probs[example.target])
        grad_logits = probs.copy()
        grad_logits[example.target] -= 1.0
        grad_logits /= len(examples)
        grads["scale"][0] += grad_logits @ raw
        grad_q = scale * sum(g * p for g, p in zip(grad_logits, partners))
        encoder.backward(q_cache, grad_q, grads)
        for g, cache in zip(grad_logits[1:], cand_caches):
            encoder.backward(cache, scale * g * q_out, grads)
        grad_nil_unit = scale * grad_logits[0] * q_out
        grads["nil"] += (grad_nil_unit - nil_unit * (nil_unit @ grad_nil_unit)) / nil_norm
    return float(total / len(examples)), grads


def mine_candidates(
    queries: Sequence[TaggedQuery],
    index: DenseIndex,
    encoder,
    k: int = 10,
    style: str = "args",
    max_query_len: int = 300,
) -> dict[str, CandidateSet]:
    """Top-k retrieval per query, injecting a missing gold at the last rank.

    In-KB queries whose gold misses the top-k get it appended in place of
    the lowest-ranked candidate, flagged via ``gold_injected``. NIL-gold
    queries pass through unmodified.
    """
    mined: dict[str, CandidateSet] = {}
    for query in queries:
        embedding = encoder.encode(format_query(query, style, max_query_len))
        result = retrieve(index, embedding, k, query_id=query.base.query_id)
        gold = query.base.gold
        if gold != NIL and gold not in result.ids:
            ids = (*result.ids[:-1], gold)
            scores = result.scores[:-1] + (result.scores[-1],)
            result = CandidateSet(
                query_id=result.query_id, ids=ids, scores=scores, gold_injected=True
            )
        mined[query.base.query_id] = result
    return mined


def positive_examples(
    queries: Sequence[TaggedQuery],
    mined: Mapping[str, CandidateSet],
    style: str = "args",
    max_query_len: int = 256,
) -> list[CrossExample]:
    """Assemble scorer training rows from mined candidates.

    In-KB rows must contain their gold (mining contract); NIL-gold rows
    target index 0.
    """
    rows: list[CrossExample] = []
    for query in queries:
        candidates = mined[query.base.query_id]
        gold = query.base.gold
        if gold == NIL:
            target = 0
        else:
            if gold not in candidates.ids:
                raise TrainingError(
                    f"query {query.base.query_id!r}: gold {gold!r} missing from mined candidates"
                )
            target = candidates.ids.index(gold) + 1
        rows.append(
            CrossExample(
                query_id=query.base.query_id,
                query_tokens=tuple(format_query(query, style, max_query_len)),
                candidate_ids=candidates.ids,
                target=target,
            )
        )
    return rows


def negative_examples(
    negatives: Sequence[NegativeExample],
    style: str = "args",
    max_query_len: int = 256,
) -> list[CrossExample]:
    """Scorer training rows for synthetic negatives: target is always NIL."""
    rows: list[CrossExample] = []
    for negative in negatives:
        rows.append(
            CrossExample(
                query_id=negative.generated.base.query_id,
                query_tokens=tuple(format_query(negative.generated, style, max_query_len)),
                candidate_ids=negative.paired_candidate_ids,
                target=0,
            )
        )
    return rows


def train_crossencoder(
    positives: Sequence[CrossExample],
    negatives: Sequence[NegativeExample],
    scorer: TinyCrossScorer,
    cfg: TrainConfig,
    kb: KnowledgeBase,
    style: str = "args",
) -> TrainReport:
    """Train the cross scorer on interleaved in-KB and out-of-KB rows.

    The example order is canonicalized before the seeded shuffle, so it
    depends only on cfg.seed, never on insertion order. When
    cfg.negative_ratio is set, negatives are deterministically subsampled
    to at most ratio * len(positives).
    """
    negatives = sorted(negatives, key=lambda n: n.generated.base.query_id)
    if cfg.negative_ratio is not None:
        cap = math.ceil(cfg.negative_ratio * len(positives))
        if len(negatives) > cap:
            rng = np.random.default_rng(cfg.seed)
            keep = sorted(rng.choice(len(negatives), size=cap, replace=False))
            negatives = [negatives[i] for i in keep]
    rows = list(positives) + negative_examples(negatives, style, cfg.max_query_len)
    if not rows:
        raise ValueError("no training examples")
    rows.sort(key=lambda r: r.query_id)
    rng = np.random.default_rng(cfg.seed)
    params = scorer.params()
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(rows))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [rows[i] for i in order[start : start + cfg.batch_size]]
            loss, grads = crossencoder_batch_loss(scorer, chunk, kb, cfg.max_candidate_len)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss!r} at epoch {epoch}, step {start // cfg.batch_size}"
                )
            _sgd_step(params, grads, cfg.learning_rate)
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return TrainReport(epoch_losses=epoch_losses, config=cfg.to_dict())
