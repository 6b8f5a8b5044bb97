"""Two-layer graph convolutional network with hand-derived gradients.

The network is deliberately minimal so the backward pass stays auditable
against finite differences: H1 = relu(A X W1 + b1), p = sigmoid(A H1 W2
+ b2) with A the symmetric degree-normalized adjacency including
self-loops. Training uses Adam over class-balanced mini-batches of
labeled nodes with full-graph forward passes. K-fold out-of-fold scoring
guarantees no node is scored by a model that saw its own label.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .graph import LabelStore

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_CLAMP = 1e-7


class DegenerateSupervisionError(ValueError):
    """The labeled set lacks one of the two classes."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs; defaults favor small graphs on one core."""

    lr: float = 0.01
    epochs: int = 100
    batch: int = 128
    seed: int = 0
    hidden: int = 64
    balance: tuple[int, int] | None = (1, 1)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.balance is not None and min(self.balance) < 1:
            raise ValueError(f"balance parts must be >= 1, got {self.balance}")


class NormalizedAdjacency:
    """CSR form of D^{-1/2} (A + I) D^{-1/2} over the homogeneous edge set."""

    def __init__(self, n: int, edges: np.ndarray) -> None:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.n = n
        degree = np.ones(n, dtype=np.float64)  # self-loop contributes 1
        np.add.at(degree, edges[:, 0], 1.0)
        np.add.at(degree, edges[:, 1], 1.0)
        inv_sqrt = 1.0 / np.sqrt(degree)
        loops = np.arange(n, dtype=np.int64)
        rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
        cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
        vals = inv_sqrt[rows] * inv_sqrt[cols]
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=self.indptr[1:])
        self.indices = cols
        self.data = vals

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        return kernels.csr_spmm(self.indptr, self.indices, self.data, dense)


def as_adjacency(edges, n: int) -> NormalizedAdjacency:
    if isinstance(edges, NormalizedAdjacency):
        return edges
    return NormalizedAdjacency(n, edges)


@dataclass
class GnnModel:
    """Parameters of the two-layer network."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    seed: int = 0

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_h(self) -> int:
        return self.w1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "GnnModel":
        return GnnModel(
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
            seed=self.seed,
        )

    def save(self, path: str | Path) -> None:
        # np.savez appends ".npz" to bare string paths; a handle keeps the
        # caller's filename intact.
        with open(path, "wb") as fh:
            np.savez(fh, seed=np.int64(self.seed), **self.params())

    @classmethod
    def load(cls, path: str | Path) -> "GnnModel":
        with np.load(path) as data:
            return cls(
                w1=data["w1"],
                b1=data["b1"],
                w2=data["w2"],
                b2=data["b2"],
                seed=int(data["seed"]),
            )


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def norm(self) -> float:
        return math.sqrt(
            sum(float(np.sum(g * g)) for g in (self.w1, self.b1, self.w2, self.b2))
        )


def init_model(d_in: int, hidden: int, seed: int) -> GnnModel:
    """Uniform fan-in initialization, biases zero, fully seeded."""
    rng = np.random.default_rng(seed)
    s1 = 1.0 / math.sqrt(d_in)
    s2 = 1.0 / math.sqrt(hidden)
    return GnnModel(
        w1=rng.uniform(-s1, s1, size=(d_in, hidden)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-s2, s2, size=(hidden, 1)),
        b2=np.zeros(1),
        seed=seed,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(model: GnnModel, adj: NormalizedAdjacency, x: np.ndarray):
    if x.shape[1] != model.d_in:
        raise ValueError(f"feature width {x.shape[1]} != model d_in {model.d_in}")
    z1 = adj.matmul(x @ model.w1) + model.b1
    h1 = np.maximum(z1, 0.0)
    z2 = adj.matmul(h1 @ model.w2) + model.b2
    return z1, h1, _sigmoid(z2)


def forward(model: GnnModel, edges, x: np.ndarray) -> np.ndarray:
    """Fraud probability per node, shape (n,)."""
    adj = as_adjacency(edges, x.shape[0])
    _, _, p = _forward_cache(model, adj, x)
    return p.ravel()


def labels_arrays(labels: LabelStore) -> tuple[np.ndarray, np.ndarray]:
    """LabelStore -> (node ids ascending, float targets)."""
    ids = np.asarray(labels.labeled_ids(), dtype=np.int64)
    y = np.asarray([labels.labels[int(v)] for v in ids], dtype=np.float64)
    return ids, y


def _as_id_target_arrays(labels) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(labels, LabelStore):
        return labels_arrays(labels)
    ids, y = labels
    return (
        np.asarray(ids, dtype=np.int64).ravel(),
        np.asarray(y, dtype=np.float64).ravel(),
    )


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped for finiteness."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("bce_loss needs at least one labeled node")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    q = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)))


def backward(model: GnnModel, edges, x: np.ndarray, labels) -> Gradients:
    """Analytic gradient of the mean BCE over the given labeled nodes.

    ``labels`` is a LabelStore or an ``(ids, targets)`` pair; repeated
    ids accumulate, matching a mean over the multiset.
    """
    ids, y = _as_id_target_arrays(labels)
    if ids.size == 0:
        raise ValueError("backward needs at least one labeled node")
    adj = as_adjacency(edges, x.shape[0])
    z1, h1, p = _forward_cache(model, adj, x)

    # dL/dz2 for mean BCE through the sigmoid collapses to (p - y) / B.
    g2 = np.zeros(x.shape[0])
    np.add.at(g2, ids, (p.ravel()[ids] - y) / ids.size)
    g2 = g2[:, None]

    sg2 = adj.matmul(g2)  # A is symmetric, so A^T g2 = A g2
    grad_w2 = h1.T @ sg2
    grad_b2 = g2.sum(axis=0)
    dz1 = (sg2 @ model.w2.T) * (z1 > 0)
    grad_w1 = x.T @ adj.matmul(dz1)
    grad_b1 = dz1.sum(axis=0)
    return Gradients(w1=grad_w1, b1=grad_b1, w2=grad_w2, b2=grad_b2)


class _Adam:
    def __init__(self, model: GnnModel, lr: float) -> None:
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in model.params().items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params().items()}

    def step(self, model: GnnModel, grads: Gradients) -> None:
        self.t += 1
        params = model.params()
        grad_map = {"w1": grads.w1, "b1": grads.b1, "w2": grads.w2, "b2": grads.b2}
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for key, param in params.items():
            g = grad_map[key]
            self.m[key] = ADAM_BETA1 * self.m[key] + (1.0 - ADAM_BETA1) * g
            self.v[key] = ADAM_BETA2 * self.v[key] + (1.0 - ADAM_BETA2) * g * g
            m_hat = self.m[key] / bc1
            v_hat = self.v[key] / bc2
            param -= self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass
class TrainResult:
    model: GnnModel
    epoch_losses: list[float]


def train(edges, x: np.ndarray, labels: LabelStore, cfg: TrainConfig) -> TrainResult:
    """Train from a fresh seeded initialization; deterministic per config.

    The per-epoch loss curve is the plain mean BCE over all labeled
    nodes after the epoch's updates (unbalanced, matching the reported
    objective rather than the sampling scheme).
    """
    adj = as_adjacency(edges, x.shape[0])
    ids, y = labels_arrays(labels)
    pos = ids[y == 1.0]
    neg = ids[y == 0.0]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateSupervisionError(
            f"training needs both classes, got {pos.size} fraud / {neg.size} benign"
        )
    rng = np.random.default_rng(cfg.seed)
    model = init_model(x.shape[1], cfg.hidden, seed=cfg.seed)
    opt = _Adam(model, cfg.lr)
    steps = max(1, math.ceil(ids.size / cfg.batch))
    losses: list[float] = []
    for _ in range(cfg.epochs):
        for _ in range(steps):
            if cfg.balance is None:
                take = min(cfg.batch, ids.size)
                pick = rng.choice(ids.size, size=take, replace=False)
                batch_ids, batch_y = ids[pick], y[pick]
            else:
                share = cfg.balance[0] / sum(cfg.balance)
                n_pos = min(max(1, round(cfg.batch * share)), cfg.batch - 1)
                n_neg = cfg.batch - n_pos
                batch_ids = np.concatenate(
                    [
                        rng.choice(pos, size=n_pos, replace=True),
                        rng.choice(neg, size=n_neg, replace=True),
                    ]
                )
                batch_y = np.concatenate(
                    [np.ones(n_pos), np.zeros(n_neg)]
                )
            grads = backward(model, adj, x, (batch_ids, batch_y))
            opt.step(model, grads)
        p = forward(model, adj, x)
        losses.append(bce_loss(p[ids], y))
    return TrainResult(model=model, epoch_losses=losses)


@dataclass
class RiskScores:
    """Per-node fraud probabilities plus how each one was produced."""

    z: np.ndarray
    provenance: list[dict]

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z, dtype=np.float64).ravel()
        if len(self.provenance) != self.z.size:
            raise ValueError(
                f"provenance length {len(self.provenance)} != scores {self.z.size}"
            )

    def save(self, path: str | Path) -> None:
        payload = {"scores": self.z.tolist(), "provenance": self.provenance}
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RiskScores":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            z=np.asarray(payload["scores"], dtype=np.float64),
            provenance=payload["provenance"],
        )


def stratified_folds(
    labels: LabelStore, k: int, seed: int
) -> dict[int, int]:
    """Node id -> fold index; each class dealt round-robin after a shuffle."""
    ids, y = labels_arrays(labels)
    pos = ids[y == 1.0]
    neg = ids[y == 0.0]
    if k < 2:
        raise ValueError(f"K must be >= 2, got {k}")
    minority = min(pos.size, neg.size)
    if minority < k:
        raise ValueError(
            f"K={k} exceeds minority-class count {minority}; "
            "every fold must retain both classes"
        )
    rng = np.random.default_rng(seed)
    fold_of: dict[int, int] = {}
    for group in (pos, neg):
        for i, v in enumerate(rng.permutation(group)):
            fold_of[int(v)] = i % k
    return fold_of


def kfold_oof_scores(
    edges,
    x: np.ndarray,
    labels: LabelStore,
    k: int,
    cfg: TrainConfig,
    return_details: bool = False,
):
    """Out-of-fold risk scores over every node in the graph.

    A labeled node is scored only by the fold model whose training set
    excluded it; unlabeled nodes get the mean over all K fold models.
    """
    adj = as_adjacency(edges, x.shape[0])
    fold_of = stratified_folds(labels, k, cfg.seed)
    n = x.shape[0]
    preds = np.zeros((k, n))
    for fold in range(k):
        train_labels = {
            v: labels.labels[v] for v in labels.labeled_ids() if fold_of[v] != fold
        }
        store = LabelStore(
            labels=train_labels,
            provenance={v: labels.provenance[v] for v in train_labels},
        )
        result = train(adj, x, store, replace(cfg, seed=cfg.seed + fold))
        preds[fold] = forward(result.model, adj, x)

    z = np.empty(n)
    provenance: list[dict] = []
    labeled = set(labels.labeled_ids())
    for v in range(n):
        if v in labeled:
            fold = fold_of[v]
            z[v] = preds[fold, v]
            provenance.append({"source": "oof", "fold": fold})
        else:
            z[v] = preds[:, v].mean()
            provenance.append({"source": "ensemble_mean"})
    scores = RiskScores(z=z, provenance=provenance)
    if return_details:
        return scores, fold_of, preds
    return scores
