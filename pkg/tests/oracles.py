"""Independent brute-force oracles used by the module and acceptance tests.

Everything here recomputes the quantity under test from first principles
(dense algebra, pair counting, exhaustive enumeration) without touching
the library's internals beyond its public forward/loss entry points.
"""

from __future__ import annotations

import numpy as np

from l2ir.gnn import GnnModel, bce_loss, forward


def dense_normalized_adjacency(n: int, edges: np.ndarray) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2} built densely."""
    a = np.eye(n)
    for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        a[u, v] = 1.0
        a[v, u] = 1.0
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def finite_difference_grads(
    model: GnnModel,
    edges: np.ndarray,
    x: np.ndarray,
    ids: np.ndarray,
    y: np.ndarray,
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of the batch BCE for every parameter."""

    def loss_at(m: GnnModel) -> float:
        p = forward(m, edges, x)
        return bce_loss(p[ids], y)

    grads: dict[str, np.ndarray] = {}
    for name, param in model.params().items():
        g = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            probe = model.copy()
            probe.params()[name][idx] += h
            up = loss_at(probe)
            probe.params()[name][idx] -= 2.0 * h
            down = loss_at(probe)
            g[idx] = (up - down) / (2.0 * h)
            it.iternext()
        grads[name] = g
    return grads


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
    floor: float = 1e-6,
) -> float:
    worst = 0.0
    for name, a in analytic.items():
        b = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def brute_force_suspicious(
    edges_homo: np.ndarray, z: np.ndarray, tau_h: float, tau_l: float, s: int
) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate-filter-sort reference for suspicious-edge selection."""
    z = np.asarray(z, dtype=np.float64)
    rows = []
    for u, v in np.asarray(edges_homo, dtype=np.int64).reshape(-1, 2):
        u, v = int(u), int(v)
        u_high, v_high = z[u] > tau_h, z[v] > tau_h
        u_low, v_low = z[u] < tau_l, z[v] < tau_l
        if (u_high and v_low) or (u_low and v_high):
            rows.append((abs(float(z[u] - z[v])), u, v))
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    rows = rows[:s]
    edges = np.array([(u, v) for _, u, v in rows], dtype=np.int64).reshape(-1, 2)
    mags = np.array([c for c, _, _ in rows], dtype=np.float64)
    return edges, mags


def auroc_pairs(scores, labels) -> float:
    """O(n_pos * n_neg) pair counting with half credit for ties."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = s[y == 1][:, None]
    neg = s[y == 0][None, :]
    wins = np.sum(pos > neg) + 0.5 * np.sum(pos == neg)
    return float(wins / (pos.size * neg.size))


def auprc_direct(scores, labels) -> float:
    """Step-sum average precision over distinct thresholds, full recount."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        predicted = s >= t
        tp = int(np.sum(predicted & (y == 1)))
        precision = tp / int(np.sum(predicted))
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def macro_f1_confusion(scores, labels, threshold: float = 0.5) -> float:
    """Macro F1 from an explicit confusion matrix, zero-division -> 0.

    Each F1 is the single rational expression 2tp/(2tp+fp+fn) of the
    integer counts, so agreement with any count-correct implementation
    is exact, not merely close: composing precision and recall in floats
    first would drift by an ULP.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pred = (s >= threshold).astype(int)
    f1s = []
    for cls in (1, 0):
        tp = int(np.sum((pred == cls) & (y == cls)))
        fp = int(np.sum((pred == cls) & (y != cls)))
        fn = int(np.sum((pred != cls) & (y == cls)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def random_graph_edges(rng: np.random.Generator, n: int,
                       n_draws: int) -> np.ndarray:
    """Canonical (min, max) unique undirected edges from random draws."""
    pairs = set()
    for u, v in rng.integers(0, n, size=(n_draws, 2)):
        if u != v:
            pairs.add((int(min(u, v)), int(max(u, v))))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)
