"""Labeled-exemplar retrieval for intent profiling.

For a target node the retriever ranks every labeled node (excluding the
target itself) by a convex combination of review-text similarity and
interacted-item overlap, then returns the top ``k`` per class. Fraud and
benign exemplars are retrieved independently so each prompt always sees
both sides of the ledger when labels permit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hashing, kernels
from .graph import BehaviorTrace, LabelStore

DEFAULT_TEXT_DIM = 1024
DEFAULT_ALPHA = 0.5


class EmptyPoolError(ValueError):
    """No labeled candidates exist for exemplar retrieval."""


@dataclass(frozen=True)
class ScoredExemplar:
    node: int
    label: int
    score: float


@dataclass
class ExemplarSet:
    """Top-k labeled neighbours in behavior space, per class."""

    target: int
    fraud: list[ScoredExemplar]
    benign: list[ScoredExemplar]
    k: int

    @property
    def short_classes(self) -> list[int]:
        """Classes whose pool could not fill ``k`` slots."""
        short = []
        if len(self.fraud) < self.k:
            short.append(1)
        if len(self.benign) < self.k:
            short.append(0)
        return short

    def all_exemplars(self) -> list[ScoredExemplar]:
        return list(self.fraud) + list(self.benign)


def text_vector(trace: BehaviorTrace, dim: int = DEFAULT_TEXT_DIM) -> np.ndarray:
    """Hashed term-frequency vector over the node's concatenated review text."""
    return hashing.hashed_tf(trace.full_text(), dim)


def interaction_similarity(a: BehaviorTrace, b: BehaviorTrace) -> float:
    """Jaccard overlap of interacted item sets; empty-vs-empty is 0."""
    sa, sb = a.item_set(), b.item_set()
    union = len(sa | sb)
    if union == 0:
        return 0.0
    return len(sa & sb) / union


def combined_similarity(
    a: BehaviorTrace,
    b: BehaviorTrace,
    alpha: float = DEFAULT_ALPHA,
    dim: int = DEFAULT_TEXT_DIM,
) -> float:
    """alpha * cosine(text) + (1 - alpha) * Jaccard(items)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    cos = hashing.cosine(text_vector(a, dim), text_vector(b, dim))
    return alpha * cos + (1.0 - alpha) * interaction_similarity(a, b)


def _item_csr(traces: list[BehaviorTrace]) -> tuple[np.ndarray, np.ndarray]:
    """Compact CSR of node -> interacted item ids (column-sorted rows)."""
    item_index: dict[str, int] = {}
    rows: list[list[int]] = []
    for trace in traces:
        cols = set()
        for rec in trace.records:
            cols.add(item_index.setdefault(rec.item, len(item_index)))
        rows.append(sorted(cols))
    indptr = np.zeros(len(traces) + 1, dtype=np.int64)
    for i, cols in enumerate(rows):
        indptr[i + 1] = indptr[i] + len(cols)
    indices = np.fromiter(
        (c for cols in rows for c in cols), dtype=np.int64, count=int(indptr[-1])
    )
    return indptr, indices


@dataclass
class ExemplarRetriever:
    """Precomputes similarity structure once, then answers per-node queries.

    Similarities against the labeled pool are materialized up front:
    text cosine via one matmul over unit-normalized hashed vectors, item
    Jaccard via the pairwise kernel. Queries are then a masked sort.
    """

    traces: list[BehaviorTrace]
    labels: LabelStore
    alpha: float = DEFAULT_ALPHA
    text_dim: int = DEFAULT_TEXT_DIM
    _pool: np.ndarray = field(init=False, repr=False)
    _pool_labels: np.ndarray = field(init=False, repr=False)
    _scores: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        pool = np.asarray(self.labels.labeled_ids(), dtype=np.int64)
        if pool.size == 0:
            raise EmptyPoolError("exemplar retrieval needs at least one labeled node")
        self._pool = pool
        self._pool_labels = np.asarray(
            [self.labels.labels[int(v)] for v in pool], dtype=np.int64
        )
        text = np.stack([text_vector(t, self.text_dim) for t in self.traces])
        cos = text @ text[pool].T
        indptr, indices = _item_csr(self.traces)
        pool_indptr = np.zeros(pool.size + 1, dtype=np.int64)
        lengths = indptr[pool + 1] - indptr[pool]
        np.cumsum(lengths, out=pool_indptr[1:])
        pool_indices = np.concatenate(
            [indices[indptr[v] : indptr[v + 1]] for v in pool]
        ) if pool.size else np.zeros(0, dtype=np.int64)
        jac = kernels.pairwise_jaccard(indptr, indices, pool_indptr, pool_indices)
        self._scores = self.alpha * cos + (1.0 - self.alpha) * jac

    def similarity(self, v: int, u: int) -> float:
        """Combined similarity of node ``v`` to labeled node ``u``."""
        where = np.nonzero(self._pool == u)[0]
        if where.size == 0:
            raise KeyError(f"node {u} is not in the labeled pool")
        return float(self._scores[v, where[0]])

    def retrieve(self, v: int, k: int) -> ExemplarSet:
        """Top ``k`` labeled exemplars per class for node ``v``, excluding ``v``.

        Ranking is by descending score; ties break toward the smaller
        node id so results do not depend on pool iteration order.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not 0 <= v < len(self.traces):
            raise ValueError(f"node index {v} out of range")
        row = self._scores[v]
        per_class: dict[int, list[ScoredExemplar]] = {0: [], 1: []}
        for cls in (1, 0):
            mask = (self._pool_labels == cls) & (self._pool != v)
            cand = self._pool[mask]
            if cand.size == 0:
                continue
            scores = row[mask]
            order = np.lexsort((cand, -scores))[:k]
            per_class[cls] = [
                ScoredExemplar(node=int(cand[i]), label=cls, score=float(scores[i]))
                for i in order
            ]
        return ExemplarSet(target=v, fraud=per_class[1], benign=per_class[0], k=k)


def retrieve_exemplars(
    v: int,
    traces: list[BehaviorTrace],
    labels: LabelStore,
    k: int = 2,
    alpha: float = DEFAULT_ALPHA,
) -> ExemplarSet:
    """One-shot convenience wrapper around :class:`ExemplarRetriever`."""
    return ExemplarRetriever(traces, labels, alpha=alpha).retrieve(v, k)
