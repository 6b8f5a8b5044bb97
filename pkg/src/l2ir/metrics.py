"""Ranking and threshold metrics plus class-rebalancing helpers.

AUROC uses the Mann-Whitney rank statistic with average ranks for tied
scores; AUPRC is average precision with tied scores collapsed into one
step so the value is permutation-invariant. Both are O(n log n).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import LabelStore


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores/labels mismatch: {s.shape} vs {y.shape}")
    if s.size == 0:
        raise ValueError("metrics need at least one instance")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def _require_both_classes(y: np.ndarray) -> tuple[int, int]:
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"metric undefined with a single class ({n_pos} pos, {n_neg} neg)"
        )
    return n_pos, n_neg


def _average_ranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks, ties receiving the mean rank of their block."""
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    s, y = _as_arrays(scores, labels)
    n_pos, n_neg = _require_both_classes(y)
    ranks = _average_ranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision with tied scores grouped into a single step."""
    s, y = _as_arrays(scores, labels)
    n_pos, _ = _require_both_classes(y)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    ap = 0.0
    tp = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        group_tp = int(y_sorted[i : j + 1].sum())
        tp += group_tp
        precision = tp / (j + 1)
        ap += (group_tp / n_pos) * precision
        i = j + 1
    return ap


def macro_f1(scores, labels, threshold: float = 0.5) -> float:
    """Unweighted mean of per-class F1 at a fixed threshold.

    Predictions are ``score >= threshold``; a class with an undefined F1
    (no predicted and no actual members) contributes 0.
    """
    s, y = _as_arrays(scores, labels)
    pred = (s >= threshold).astype(np.int64)
    f1s = []
    for cls in (0, 1):
        tp = int(np.sum((pred == cls) & (y == cls)))
        fp = int(np.sum((pred == cls) & (y != cls)))
        fn = int(np.sum((pred != cls) & (y == cls)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def roc_curve_points(scores, labels) -> list[dict]:
    """(fpr, tpr, threshold) at each distinct score, descending."""
    s, y = _as_arrays(scores, labels)
    n_pos, n_neg = _require_both_classes(y)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    points = [{"fpr": 0.0, "tpr": 0.0, "threshold": None}]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        block = y_sorted[i : j + 1]
        tp += int(block.sum())
        fp += block.size - int(block.sum())
        points.append(
            {
                "fpr": fp / n_neg,
                "tpr": tp / n_pos,
                "threshold": float(s_sorted[i]),
            }
        )
        i = j + 1
    return points


def pr_curve_points(scores, labels) -> list[dict]:
    """(recall, precision, threshold) at each distinct score, descending."""
    s, y = _as_arrays(scores, labels)
    n_pos, _ = _require_both_classes(y)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    points = []
    tp = 0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp += int(y_sorted[i : j + 1].sum())
        points.append(
            {
                "recall": tp / n_pos,
                "precision": tp / (j + 1),
                "threshold": float(s_sorted[i]),
            }
        )
        i = j + 1
    return points


@dataclass
class MetricReport:
    """Headline numbers for one scored node set."""

    auroc: float
    auprc: float
    macro_f1: float
    n_pos: int
    n_neg: int
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "macro_f1": self.macro_f1,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "threshold": self.threshold,
        }


def evaluate(scores, labels, threshold: float = 0.5) -> MetricReport:
    s, y = _as_arrays(scores, labels)
    n_pos, n_neg = _require_both_classes(y)
    return MetricReport(
        auroc=auroc(s, y),
        auprc=auprc(s, y),
        macro_f1=macro_f1(s, y, threshold),
        n_pos=n_pos,
        n_neg=n_neg,
        threshold=threshold,
    )


def write_report(
    scores, labels, path: str | Path, threshold: float = 0.5, curves: bool = True
) -> MetricReport:
    """Evaluate and persist a JSON report, optionally with curve points."""
    report = evaluate(scores, labels, threshold)
    payload = report.to_dict()
    if curves:
        payload["roc_curve"] = roc_curve_points(scores, labels)
        payload["pr_curve"] = pr_curve_points(scores, labels)
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return report


def undersample(
    labels: LabelStore, ratio: tuple[int, int] = (1, 1), seed: int = 0
) -> LabelStore:
    """Subsample labeled nodes toward a pos:neg ratio without replacement.

    The achievable scale is t = min(n_pos // p, n_neg // q); the result
    keeps t*p positives and t*q negatives, so the binding class is kept
    (almost) whole and only the surplus class is thinned.
    """
    p, q = ratio
    if p < 1 or q < 1:
        raise ValueError(f"ratio parts must be >= 1, got {ratio}")
    pos = labels.ids_of_class(1)
    neg = labels.ids_of_class(0)
    t = min(len(pos) // p, len(neg) // q)
    if t == 0:
        raise ValueError(
            f"ratio {p}:{q} unattainable with {len(pos)} pos / {len(neg)} neg"
        )
    rng = np.random.default_rng(seed)
    keep_pos = sorted(rng.choice(np.asarray(pos), size=t * p, replace=False).tolist())
    keep_neg = sorted(rng.choice(np.asarray(neg), size=t * q, replace=False).tolist())
    keep = set(keep_pos) | set(keep_neg)
    return LabelStore(
        labels={v: labels.labels[v] for v in sorted(keep)},
        provenance={v: labels.provenance[v] for v in sorted(keep)},
        round_=labels.round,
    )
