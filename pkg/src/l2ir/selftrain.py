"""Adaptive self-training over fused features.

Each round re-initializes the network from scratch (seeded as base+t),
trains on the current labeled set, then promotes high-confidence
unlabeled nodes into the labeled set under asymmetric thresholds: a
node joins the fraud side when p >= tau_fraud and the benign side when
1 - p >= tau_benign, with tau_benign > tau_fraud so benign promotion is
the stricter of the two. Labels only ever grow, and ground truth is
immutable throughout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .fusion import FusedFeatures
from .gnn import (
    DegenerateSupervisionError,
    GnnModel,
    TrainConfig,
    as_adjacency,
    forward,
    train,
)
from .graph import LabelStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelfTrainConfig:
    """Thresholds and round budget; invalid combinations fail construction."""

    tau_fraud: float = 0.90
    tau_benign: float = 0.95
    rounds: int = 3
    train: TrainConfig = field(default_factory=TrainConfig)
    reset_each_round: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_fraud < 1.0:
            raise ValueError(f"tau_fraud must lie in (0, 1), got {self.tau_fraud}")
        if not 0.0 < self.tau_benign < 1.0:
            raise ValueError(f"tau_benign must lie in (0, 1), got {self.tau_benign}")
        if self.tau_benign <= self.tau_fraud:
            raise ValueError(
                f"tau_benign ({self.tau_benign}) must exceed tau_fraud "
                f"({self.tau_fraud})"
            )
        if self.tau_fraud + self.tau_benign <= 1.0:
            raise ValueError(
                f"tau_fraud + tau_benign must exceed 1 so the pseudo-label "
                f"sets stay disjoint, got {self.tau_fraud + self.tau_benign}"
            )
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")


@dataclass
class RoundEntry:
    """Bookkeeping for one self-training round."""

    round: int
    n_labeled: int
    losses: list[float]
    n_pseudo_fraud: int
    n_pseudo_benign: int
    n_labeled_after: int
    holdout: dict | None = None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "n_labeled": self.n_labeled,
            "losses": self.losses,
            "n_pseudo_fraud": self.n_pseudo_fraud,
            "n_pseudo_benign": self.n_pseudo_benign,
            "n_labeled_after": self.n_labeled_after,
            "holdout": self.holdout,
        }


class SelfTrainAbort(DegenerateSupervisionError):
    """Supervision degenerated mid-run; carries the rounds completed so far."""

    def __init__(self, message: str, round_log: list[RoundEntry]):
        super().__init__(message)
        self.round_log = round_log


def save_round_log(log: list[RoundEntry], path: str | Path) -> None:
    payload = [entry.to_dict() for entry in log]
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def generate_pseudo_labels(
    p: np.ndarray, unlabeled, cfg: SelfTrainConfig
) -> tuple[list[int], list[int]]:
    """Threshold probabilities over the unlabeled pool (both bounds inclusive).

    Disjointness of the two sets follows from tau_fraud + tau_benign > 1,
    which the config guarantees at construction.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    pool = sorted(int(v) for v in unlabeled)
    fraud = [v for v in pool if p[v] >= cfg.tau_fraud]
    benign = [v for v in pool if 1.0 - p[v] >= cfg.tau_benign]
    return fraud, benign


def expand_labels(
    labels: LabelStore, fraud_ids, benign_ids, round_t: int
) -> LabelStore:
    """Merge pseudo-labels; relabeling any existing node is an error."""
    overlap = set(fraud_ids) & set(benign_ids)
    if overlap:
        raise ValueError(f"pseudo-label sets overlap on nodes {sorted(overlap)}")
    return labels.with_pseudo(fraud_ids, benign_ids, round_t)


def run_self_training(
    edges,
    fused,
    labels: LabelStore,
    cfg: SelfTrainConfig,
    holdout: dict[int, int] | None = None,
) -> tuple[GnnModel, list[RoundEntry]]:
    """Run the full loop and return the final-round model plus the log.

    ``holdout`` maps node id -> true label for an evaluation set that is
    excluded from pseudo-labeling (its labels stay unseen by training)
    and scored after every round.
    """
    matrix = fused.matrix if isinstance(fused, FusedFeatures) else np.asarray(
        fused, dtype=np.float64
    )
    adj = as_adjacency(edges, matrix.shape[0])
    holdout = dict(holdout or {})
    overlap = set(holdout) & set(labels.labels)
    if overlap:
        raise ValueError(
            f"holdout nodes {sorted(overlap)[:5]}... are already labeled"
        )
    base = labels.copy()
    current = labels.copy()
    log: list[RoundEntry] = []
    model: GnnModel | None = None
    for t in range(cfg.rounds):
        round_cfg = replace(cfg.train, seed=cfg.train.seed + t)
        try:
            result = train(adj, matrix, current, round_cfg)
        except DegenerateSupervisionError as exc:
            raise SelfTrainAbort(
                f"round {t}: {exc}", round_log=log
            ) from exc
        model = result.model
        p = forward(model, adj, matrix)

        snapshot = None
        if holdout:
            ids = sorted(holdout)
            y = [holdout[v] for v in ids]
            snapshot = metrics.evaluate(p[ids], y).to_dict()

        pool = [v for v in current.unlabeled_ids(matrix.shape[0]) if v not in holdout]
        fraud_ids, benign_ids = generate_pseudo_labels(p, pool, cfg)
        expanded = expand_labels(current, fraud_ids, benign_ids, t)
        log.append(
            RoundEntry(
                round=t,
                n_labeled=len(current),
                losses=result.epoch_losses,
                n_pseudo_fraud=len(fraud_ids),
                n_pseudo_benign=len(benign_ids),
                n_labeled_after=len(expanded),
                holdout=snapshot,
            )
        )
        logger.info(
            "round %d: labeled %d -> %d (+%d fraud, +%d benign)",
            t,
            len(current),
            len(expanded),
            len(fraud_ids),
            len(benign_ids),
        )
        current = base.copy() if cfg.reset_each_round else expanded
    assert model is not None  # rounds >= 1 is enforced at construction
    return model, log
