"""Nearest-neighbour and analogy queries over token embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autoencoder import AutoencoderModel
from .errors import DimensionMismatch, UnknownToken
from .tokenizer import Vocabulary


@dataclass(frozen=True)
class EmbeddingIndex:
    tokens: tuple[str, ...]
    vectors: np.ndarray  # (K, D)
    metric: str = "cosine"  # or "euclidean"

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise DimensionMismatch("one embedding row per token is required")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embeddings must be finite")
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError(f"unknown metric {self.metric!r}")
        object.__setattr__(self, "_pos", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_model(cls, model: AutoencoderModel, vocab: Vocabulary, metric: str = "cosine") -> "EmbeddingIndex":
        if len(vocab) != model.K:
            raise DimensionMismatch(f"vocabulary size {len(vocab)} != model K {model.K}")
        return cls(vocab.tokens, model.W[model.M:].copy(), metric)

    def vector(self, token: str) -> np.ndarray:
        i = self._pos.get(token)
        if i is None:
            raise UnknownToken(token)
        return self.vectors[i]

    def scores(self, query: np.ndarray) -> np.ndarray:
        """Similarity of every row to `query`; higher is closer."""
        if self.metric == "euclidean":
            return -np.linalg.norm(self.vectors - query, axis=1)
        norms = np.linalg.norm(self.vectors, axis=1)
        qn = np.linalg.norm(query)
        with np.errstate(divide="ignore", invalid="ignore"):
            sim = (self.vectors @ query) / (norms * qn)
        sim = np.clip(sim, -1.0, 1.0)
        # zero vectors have no direction: rank them last
        sim[(norms == 0) | (qn == 0)] = -np.inf
        return sim

    def top(self, query: np.ndarray, n: int, exclude=()) -> list[tuple[str, float]]:
        if n < 1:
            raise ValueError("n must be >= 1")
        sim = self.scores(query)
        excl = set(exclude)
        ranked = sorted(
            ((t, float(s)) for t, s in zip(self.tokens, sim) if t not in excl),
            key=lambda ts: (-ts[1], ts[0]),
        )
        return ranked[:n]


def nearest_neighbors(index: EmbeddingIndex, token: str, n: int = 5) -> list[tuple[str, float]]:
    return index.top(index.vector(token), n, exclude=(token,))


def analogy(index: EmbeddingIndex, positive_a: str, negative_b: str, positive_c: str,
            n: int = 5, exclude_query: bool = True) -> list[tuple[str, float]]:
    """Tokens closest to v(a) - v(b) + v(c)."""
    q = index.vector(positive_a) - index.vector(negative_b) + index.vector(positive_c)
    excl = (positive_a, negative_b, positive_c) if exclude_query else ()
    return index.top(q, n, exclude=excl)


def format_results(results: list[tuple[str, float]]) -> str:
    return "".join(f"{t}\t{s:.4f}\n" for t, s in results)
