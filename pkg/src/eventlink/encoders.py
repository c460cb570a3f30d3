"""Text-encoder adapters mapping token sequences to unit vectors.

Two adapters ship with the package: a seeded hashing encoder whose token
vectors are reproducible from (seed, token) alone, used as a test oracle
and for untrained retrieval, and a tiny trainable encoder (embedding
table, mean pool, affine map, L2 normalization) whose analytic gradients
back the desk-scale training loops. Both emit unit-norm vectors, so dot
product equals cosine everywhere downstream.

Adapters may sub-tokenize internally but must treat marker tokens as
atomic. ``encode`` is safe for concurrent calls on frozen parameters.
"""

from __future__ import annotations

import hashlib
import json
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

OOV_TOKEN = "[OOV]"

CHECKPOINT_VERSION = 1


@runtime_checkable
class EncoderAdapter(Protocol):
    dim: int
    trainable: bool

    def encode(self, tokens: Sequence[str]) -> np.ndarray: ...


def token_hash(token: str) -> int:
    """Stable 64-bit hash of a token string (process- and run-independent)."""
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


class HashingEncoder:
    """Deterministic bag encoder: seeded unit vector per token, normalized sum."""

    trainable = False

    def __init__(self, dim: int, seed: int):
        if dim < 2:
            raise ValueError("dim must be at least 2")
        self.dim = dim
        self.seed = seed
        self._vectors: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._vectors.get(token)
        if vec is None:
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, token_hash(token))))
            raw = rng.standard_normal(self.dim)
            vec = raw / np.linalg.norm(raw)
            self._vectors[token] = vec
        return vec

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            raise ValueError("cannot encode an empty token sequence")
        total = np.zeros(self.dim)
        for token in tokens:
            total += self.token_vector(token)
        norm = np.linalg.norm(total)
        if norm == 0.0:
            raise ValueError("token vectors cancelled out; cannot normalize")
        return total / norm

    def state_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "kind": "hashing",
            "dim": self.dim,
            "seed": self.seed,
        }


class TinyEncoder:
    """Trainable bag encoder: token embeddings, mean pool, affine, L2 norm.

    Unknown tokens map to the ``[OOV]`` embedding. Parameters live in
    float64 numpy arrays; ``forward``/``backward`` expose the caches and
    analytic gradients used by the training loops.
    """

    trainable = True

    def __init__(
        self,
        vocab: Sequence[str],
        dim: int,
        seed: int | None = 0,
        rng: np.random.Generator | None = None,
    ):
        if dim < 2:
            raise ValueError("dim must be at least 2")
        vocab = list(dict.fromkeys(vocab))
        if OOV_TOKEN not in vocab:
            vocab.append(OOV_TOKEN)
        self.vocab = vocab
        self.dim = dim
        self._ids = {token: i for i, token in enumerate(vocab)}
        self._oov = self._ids[OOV_TOKEN]
        if rng is None:
            rng = np.random.default_rng(seed)
        self.embed = rng.normal(0.0, 1.0 / np.sqrt(dim), (len(vocab), dim))
        self.weight = np.eye(dim) + rng.normal(0.0, 0.01, (dim, dim))
        self.bias = np.zeros(dim)

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        return [self._ids.get(t, self._oov) for t in tokens]

    def params(self) -> dict[str, np.ndarray]:
        return {"embed": self.embed, "weight": self.weight, "bias": self.bias}

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params().items()}

    def forward(self, tokens: Sequence[str]) -> tuple[np.ndarray, dict]:
        if not tokens:
            raise ValueError("cannot encode an empty token sequence")
        ids = self.token_ids(tokens)
        mean = self.embed[ids].mean(axis=0)
        pre = self.weight @ mean + self.bias
        norm = np.linalg.norm(pre)
        out = pre / norm
        return out, {"ids": ids, "mean": mean, "norm": norm, "out": out}

    def backward(self, cache: dict, grad_out: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        out, norm, mean, ids = cache["out"], cache["norm"], cache["mean"], cache["ids"]
        grad_pre = (grad_out - out * (out @ grad_out)) / norm
        grads["weight"] += np.outer(grad_pre, mean)
        grads["bias"] += grad_pre
        grad_mean = self.weight.T @ grad_pre
        share = grad_mean / len(ids)
        for idx in ids:
            grads["embed"][idx] += share

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return self.forward(tokens)[0]

    def state_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "kind": "tiny",
            "dim": self.dim,
            "vocab": list(self.vocab),
            "embed": self.embed.tolist(),
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "TinyEncoder":
        enc = cls.__new__(cls)
        enc.vocab = list(state["vocab"])
        enc.dim = int(state["dim"])
        enc._ids = {token: i for i, token in enumerate(enc.vocab)}
        enc._oov = enc._ids[OOV_TOKEN]
        enc.embed = np.array(state["embed"], dtype=float)
        enc.weight = np.array(state["weight"], dtype=float)
        enc.bias = np.array(state["bias"], dtype=float)
        return enc


def hashing_encoder(dim: int, seed: int) -> HashingEncoder:
    return HashingEncoder(dim, seed)


def tiny_encoder(vocab: Sequence[str], dim: int, seed: int) -> TinyEncoder:
    return TinyEncoder(vocab, dim, seed=seed)


def fingerprint(state: dict) -> str:
    """Content hash of an encoder or scorer checkpoint."""
    canonical = json.dumps(state, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_encoder(encoder, path) -> str:
    state = encoder.state_dict()
    payload = json.dumps(state, sort_keys=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)
    return fingerprint(state)


def load_encoder(path):
    with open(path, encoding="utf-8") as fh:
        state = json.load(fh)
    kind = state.get("kind")
    if kind == "hashing":
        return HashingEncoder(int(state["dim"]), int(state["seed"]))
    if kind == "tiny":
        return TinyEncoder.from_state_dict(state)
    raise ValueError(f"unknown encoder kind {kind!r}")


def encoder_fingerprint(encoder) -> str:
    return fingerprint(encoder.state_dict())
