"""End-to-end orchestration: profile, score, audit, fuse, self-train.

The full variant runs every stage; the baseline variant trains the same
network with the same budget on raw features alone, which is the
control arm for measuring what the LLM-derived views add. A workdir
turns each stage boundary into a checkpoint file so interrupted runs
resume without repeating finished work (LLM responses are additionally
cached by the client itself).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import HashingTextEncoder
from .fusion import (
    FusedFeatures,
    cross_audit,
    fuse,
    partition_nodes,
    pool_all_edge_intents,
    select_suspicious,
)
from .gnn import RiskScores, TrainConfig, forward, kfold_oof_scores
from .graph import GraphDataset, LabelStore
from .llm import LLMClient
from .prompts import (
    ExemplarCase,
    NodeSummary,
    Prompt,
    RelationContext,
    build_profile_prompt,
)
from .retrieval import ExemplarRetriever
from .selftrain import RoundEntry, SelfTrainConfig, run_self_training, save_round_log

logger = logging.getLogger(__name__)


class StageDependencyError(RuntimeError):
    """A stage was invoked without the artifact an earlier stage produces."""


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for every stage; defaults follow the documented settings."""

    alpha: float = 0.5
    k_exemplars: int = 2
    text_dim: int = 1024
    embed_dim: int = 256
    folds: int = 5
    tau_high: float = 0.80
    tau_low: float = 0.20
    edge_budget: int = 4000
    gamma: float | None = None
    prelim: TrainConfig = field(default_factory=TrainConfig)
    selftrain: SelfTrainConfig = field(default_factory=SelfTrainConfig)
    variant: str = "full"

    def __post_init__(self) -> None:
        if self.variant not in ("full", "baseline"):
            raise ValueError(f"variant must be 'full' or 'baseline', got {self.variant!r}")


@dataclass
class PipelineResult:
    preliminary: RiskScores | None
    fused: FusedFeatures
    model: object
    round_log: list[RoundEntry]
    final_scores: np.ndarray
    n_audited_edges: int = 0


def split_labels(
    labels: LabelStore, train_frac: float, holdout_frac: float, seed: int
) -> tuple[LabelStore, dict[int, int]]:
    """Stratified split of ground truth into train labels and a holdout map.

    Nodes in neither part become the unlabeled pool that self-training
    may pseudo-label. Fractions apply per class so both sides keep the
    original prevalence.
    """
    if train_frac <= 0 or holdout_frac < 0 or train_frac + holdout_frac > 1:
        raise ValueError(
            f"need train_frac > 0, holdout_frac >= 0, sum <= 1; "
            f"got {train_frac}, {holdout_frac}"
        )
    rng = np.random.default_rng(seed)
    train: dict[int, int] = {}
    holdout: dict[int, int] = {}
    for cls in (0, 1):
        ids = np.asarray(labels.ids_of_class(cls), dtype=np.int64)
        perm = rng.permutation(ids)
        n_train = int(round(train_frac * ids.size))
        n_hold = int(round(holdout_frac * ids.size))
        for v in perm[:n_train]:
            train[int(v)] = cls
        for v in perm[n_train : n_train + n_hold]:
            holdout[int(v)] = cls
    return LabelStore(train), holdout


def node_summaries(ds: GraphDataset) -> list[NodeSummary]:
    return [
        NodeSummary.from_trace(ds.node_ids[v], ds.traces[v])
        for v in range(ds.graph.n)
    ]


def relation_contexts(
    ds: GraphDataset, labels: LabelStore, gamma: float | None = None
) -> list[RelationContext]:
    """Per-node graph context: neighbor counts, local RBF similarity,
    and the label breakdown of the neighborhood under the given labels."""
    if gamma is None:
        gamma = 1.0 / ds.features.dim
    x = ds.features.matrix
    contexts = []
    for v in range(ds.graph.n):
        counts = tuple(
            (rel, int(ds.graph.neighbors(v, rel).size))
            for rel in ds.graph.relations
        )
        nbrs = ds.graph.neighbors(v)
        if nbrs.size:
            d2 = np.sum((x[nbrs] - x[v]) ** 2, axis=1)
            sim = float(np.mean(np.exp(-gamma * d2)))
        else:
            sim = None
        fraud = benign = unlabeled = 0
        for u in nbrs:
            y = labels.labels.get(int(u))
            if y == 1:
                fraud += 1
            elif y == 0:
                benign += 1
            else:
                unlabeled += 1
        contexts.append(
            RelationContext(
                neighbor_counts=counts,
                behavior_similarity=sim,
                labeled_fraud=fraud,
                labeled_benign=benign,
                unlabeled=unlabeled,
            )
        )
    return contexts


def build_profile_prompts(
    ds: GraphDataset, labels: LabelStore, cfg: PipelineConfig
) -> list[Prompt]:
    """One profiling prompt per node, exemplars retrieved under ``labels``."""
    summaries = node_summaries(ds)
    contexts = relation_contexts(ds, labels, cfg.gamma)
    retriever = ExemplarRetriever(
        ds.traces, labels, alpha=cfg.alpha, text_dim=cfg.text_dim
    )
    prompts = []
    for v in range(ds.graph.n):
        exemplar_set = retriever.retrieve(v, cfg.k_exemplars)
        cases = [
            ExemplarCase(
                summary=summaries[ex.node],
                context=contexts[ex.node],
                label=ex.label,
                score=ex.score,
            )
            for ex in exemplar_set.all_exemplars()
        ]
        prompts.append(
            build_profile_prompt(summaries[v], ds.traces[v], cases, contexts[v])
        )
    return prompts


def compute_node_embeddings(
    ds: GraphDataset,
    labels: LabelStore,
    cfg: PipelineConfig,
    client: LLMClient,
    encoder=None,
) -> np.ndarray:
    """Profile every node with the LLM and encode the reports row-wise."""
    encoder = encoder or HashingTextEncoder(cfg.embed_dim)
    prompts = build_profile_prompts(ds, labels, cfg)
    texts = client.complete_many(prompts)
    return np.stack([encoder.encode(t) for t in texts])


def compute_edge_embeddings(
    ds: GraphDataset,
    scores: RiskScores,
    cfg: PipelineConfig,
    client: LLMClient,
    encoder=None,
) -> tuple[np.ndarray, int]:
    """Audit suspicious edges and mean-pool their encoded reports per node."""
    encoder = encoder or HashingTextEncoder(cfg.embed_dim)
    partition = partition_nodes(scores, cfg.tau_high, cfg.tau_low)
    suspicious = select_suspicious(
        ds.graph.homo_edges(), partition, scores, cfg.edge_budget
    )
    reports = cross_audit(
        suspicious, ds.traces, scores, client, display_ids=ds.node_ids
    )
    if len(suspicious):
        vectors = np.stack(
            [
                encoder.encode(reports[(int(u), int(v))].text)
                for u, v in suspicious.edges
            ]
        )
    else:
        vectors = np.zeros((0, cfg.embed_dim))
    pooled = pool_all_edge_intents(ds.graph.n, suspicious, vectors, cfg.embed_dim)
    return pooled, len(suspicious)


def run_pipeline(
    ds: GraphDataset,
    labels: LabelStore,
    cfg: PipelineConfig,
    client: LLMClient | None = None,
    encoder=None,
    holdout: dict[int, int] | None = None,
    workdir: str | Path | None = None,
) -> PipelineResult:
    """Execute the full procedure (or the baseline arm) on one dataset.

    ``labels`` are the training labels only; ``holdout`` nodes are never
    pseudo-labeled and are scored after every round. With a ``workdir``,
    finished stages are reloaded from their checkpoint files.
    """
    if cfg.variant == "full" and client is None:
        raise ValueError("the full pipeline needs an LLM client")
    encoder = encoder or HashingTextEncoder(cfg.embed_dim)
    work = Path(workdir) if workdir is not None else None
    if work is not None:
        work.mkdir(parents=True, exist_ok=True)
    x = ds.features.matrix
    edges = ds.graph.homo_edges()

    preliminary: RiskScores | None = None
    n_audited = 0

    fused_path = work / "H.bin" if work else None
    if fused_path is not None and fused_path.exists():
        fused = FusedFeatures.load(fused_path)
        logger.info("resume: loaded fused features from %s", fused_path)
        z_path = work / "z_pre.json"
        if z_path.exists():
            preliminary = RiskScores.load(z_path)
    elif cfg.variant == "baseline":
        fused = FusedFeatures(matrix=x, d=ds.features.dim, d_s=0)
        if fused_path is not None:
            fused.save(fused_path)
    else:
        h_node = compute_node_embeddings(ds, labels, cfg, client, encoder)

        z_path = work / "z_pre.json" if work else None
        if z_path is not None and z_path.exists():
            preliminary = RiskScores.load(z_path)
            logger.info("resume: loaded preliminary scores from %s", z_path)
        else:
            prelim_features = np.concatenate([x, h_node], axis=1)
            preliminary = kfold_oof_scores(
                edges, prelim_features, labels, cfg.folds, cfg.prelim
            )
            if z_path is not None:
                preliminary.save(z_path)

        h_edge, n_audited = compute_edge_embeddings(
            ds, preliminary, cfg, client, encoder
        )
        fused = fuse(x, h_node, h_edge)
        if fused_path is not None:
            fused.save(fused_path)

    model, round_log = run_self_training(
        edges, fused, labels, cfg.selftrain, holdout=holdout
    )
    if work is not None:
        model.save(work / "model.npz")
        save_round_log(round_log, work / "rounds.json")
    final_scores = forward(model, edges, fused.matrix)
    return PipelineResult(
        preliminary=preliminary,
        fused=fused,
        model=model,
        round_log=round_log,
        final_scores=final_scores,
        n_audited_edges=n_audited,
    )
