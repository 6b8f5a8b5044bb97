"""Command-line interface: one subcommand per pipeline stage plus a
convenience ``run`` that chains everything on a single dataset."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click
import numpy as np

from . import __version__, metrics, synth
from .encoder import HashingTextEncoder
from .fusion import (
    FusedFeatures,
    cross_audit,
    fuse,
    partition_nodes,
    pool_all_edge_intents,
    select_suspicious,
)
from .gnn import RiskScores, TrainConfig, kfold_oof_scores
from .graph import (
    ALL_RELATIONS,
    EmptyStatisticError,
    GraphDataset,
    IngestError,
    behavior_similarity,
    connection_similarity,
    load_graph,
)
from .llm import LLMClient, get_backend
from .pipeline import (
    PipelineConfig,
    build_profile_prompts,
    compute_node_embeddings,
    run_pipeline,
    split_labels,
)
from .retrieval import ExemplarRetriever
from .selftrain import SelfTrainConfig, run_self_training, save_round_log

logger = logging.getLogger(__name__)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise click.ClickException(
            f"{path} not found; run `{producer}` first (stage dependency)"
        )
    return path


def _load_dataset(graph: str) -> GraphDataset:
    path = _require(Path(graph), "l2ir ingest")
    try:
        return GraphDataset.load(path)
    except (IngestError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc


def _client(backend: str, cache: str | None) -> LLMClient:
    try:
        return LLMClient(get_backend(backend), cache_dir=cache)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
@click.version_option(version=__version__, prog_name="l2ir")
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Fraud-detection pipeline with LLM-assisted intent reasoning."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--nodes", required=True, type=click.Path(), help="nodes.jsonl path.")
@click.option("--edges", required=True, type=click.Path(), help="edges.jsonl path.")
@click.option("--out", required=True, type=click.Path(), help="Output graph container.")
def ingest(nodes: str, edges: str, out: str) -> None:
    """Validate a JSONL pair and write the binary graph container."""
    try:
        ds = load_graph(nodes, edges)
    except IngestError as exc:
        raise click.ClickException(str(exc)) from exc
    ds.save(out)
    click.echo(
        f"ingested {ds.graph.n} nodes, "
        f"{sum(ds.graph.adjacency[r].shape[0] for r in ds.graph.relations)} edges "
        f"across {len(ds.graph.relations)} relations -> {out}"
    )


@main.command()
@click.option("--graph", required=True, type=click.Path())
@click.option("--relation", default=ALL_RELATIONS, show_default=True)
@click.option("--gamma", type=float, default=None, help="RBF width; default 1/d.")
@click.option("--as-json", "as_json", is_flag=True, help="Emit machine-readable JSON.")
def stats(graph: str, relation: str, gamma: float | None, as_json: bool) -> None:
    """Camouflage statistics and structural counts."""
    ds = _load_dataset(graph)
    rels = ds.graph.relations if relation == ALL_RELATIONS else [relation]
    for rel in rels:
        if rel not in ds.graph.relations:
            raise click.ClickException(f"unknown relation {rel!r}")
    payload: dict = {
        "nodes": ds.graph.n,
        "relations": {
            rel: int(ds.graph.adjacency[rel].shape[0]) for rel in ds.graph.relations
        },
        "homogeneous_edges": int(ds.graph.homo_edges().shape[0]),
        "labeled_fraud": len(ds.labels.ids_of_class(1)),
        "labeled_benign": len(ds.labels.ids_of_class(0)),
        "unlabeled": ds.graph.n - len(ds.labels),
    }
    scopes = [relation] if relation != ALL_RELATIONS else [ALL_RELATIONS] + list(
        ds.graph.relations
    )
    similarity: dict = {}
    for scope in scopes:
        entry: dict = {}
        try:
            entry["behavior_similarity"] = behavior_similarity(
                ds.graph, ds.features, ds.labels, relation=scope, gamma=gamma
            )
            entry["connection_similarity"] = connection_similarity(
                ds.graph, ds.labels, relation=scope
            )
        except EmptyStatisticError as exc:
            entry["error"] = str(exc)
        similarity[scope] = entry
    payload["similarity"] = similarity
    if as_json:
        click.echo(json.dumps(payload, indent=2))
        return
    click.echo(f"nodes: {payload['nodes']}")
    for rel, count in payload["relations"].items():
        click.echo(f"edges[{rel}]: {count}")
    click.echo(f"edges[homogeneous]: {payload['homogeneous_edges']}")
    click.echo(
        f"labels: {payload['labeled_fraud']} fraud, "
        f"{payload['labeled_benign']} benign, {payload['unlabeled']} unlabeled"
    )
    for scope, entry in similarity.items():
        if "error" in entry:
            click.echo(f"similarity[{scope}]: n/a ({entry['error']})")
        else:
            click.echo(
                f"similarity[{scope}]: behavior "
                f"{entry['behavior_similarity']:.4f}, connection "
                f"{entry['connection_similarity']:.4f}"
            )


@main.command()
@click.option("--graph", required=True, type=click.Path())
@click.option("--node", required=True, help="Original (string) node id.")
@click.option("--k", default=2, show_default=True)
@click.option("--alpha", default=0.5, show_default=True)
def exemplars(graph: str, node: str, k: int, alpha: float) -> None:
    """Top-k labeled exemplars per class for one node."""
    ds = _load_dataset(graph)
    try:
        v = ds.index_of(node)
        retriever = ExemplarRetriever(ds.traces, ds.labels, alpha=alpha)
        result = retriever.retrieve(v, k)
    except (KeyError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    for name, cases in (("fraud", result.fraud), ("benign", result.benign)):
        if not cases:
            click.echo(f"{name}: none available")
            continue
        for rank, ex in enumerate(cases, start=1):
            click.echo(
                f"{name} #{rank}: {ds.node_ids[ex.node]} "
                f"(similarity {ex.score:.4f})"
            )
    if result.short_classes:
        click.echo(
            "warning: labeled pool smaller than k for class(es) "
            + ", ".join(str(c) for c in result.short_classes)
        )


@main.command()
@click.option("--graph", required=True, type=click.Path())
@click.option(
    "--backend", type=click.Choice(["mock", "remote"]), default="mock",
    show_default=True,
)
@click.option("--cache", required=True, type=click.Path(), help="Response cache dir.")
@click.option("--alpha", default=0.5, show_default=True)
@click.option("--k", default=2, show_default=True)
def profile(graph: str, backend: str, cache: str, alpha: float, k: int) -> None:
    """Generate (and cache) a behavior-intent report for every node."""
    ds = _load_dataset(graph)
    client = _client(backend, cache)
    cfg = PipelineConfig(alpha=alpha, k_exemplars=k)
    prompts = build_profile_prompts(ds, ds.labels, cfg)
    client.complete_many(prompts)
    click.echo(
        f"profiled {len(prompts)} nodes "
        f"({client.cache_hits} cache hits, {client.cache_misses} backend calls)"
    )


@main.command()
@click.option("--graph", required=True, type=click.Path())
@click.option("--scores", required=True, type=click.Path(), help="z.json input.")
@click.option(
    "--backend", type=click.Choice(["mock", "remote"]), default="mock",
    show_default=True,
)
@click.option("--cache", required=True, type=click.Path())
@click.option("--tau-high", default=0.80, show_default=True)
@click.option("--tau-low", default=0.20, show_default=True)
@click.option("--budget", default=4000, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Optional verdict index.")
def audit(
    graph: str,
    scores: str,
    backend: str,
    cache: str,
    tau_high: float,
    tau_low: float,
    budget: int,
    out: str | None,
) -> None:
    """Cross-audit suspicious edges under preliminary risk scores."""
    ds = _load_dataset(graph)
    z = RiskScores.load(_require(Path(scores), "l2ir score"))
    client = _client(backend, cache)
    partition = partition_nodes(z, tau_high, tau_low)
    suspicious = select_suspicious(ds.graph.homo_edges(), partition, z, budget)
    reports = cross_audit(suspicious, ds.traces, z, client, display_ids=ds.node_ids)
    verdicts = {"Low": 0, "Medium": 0, "High": 0}
    degraded = 0
    for report in reports.values():
        verdicts[report.verdict] += 1
        degraded += report.degraded
    click.echo(
        f"audited {len(reports)} edges "
        f"(High {verdicts['High']}, Medium {verdicts['Medium']}, "
        f"Low {verdicts['Low']}, degraded {degraded}; "
        f"{client.cache_hits} cache hits, {client.cache_misses} backend calls)"
    )
    if out:
        index = [
            {
                "edge": [ds.node_ids[u], ds.node_ids[v]],
                "magnitude": float(mag),
                "verdict": reports[(int(u), int(v))].verdict,
                "confidence": reports[(int(u), int(v))].confidence,
                "signals": reports[(int(u), int(v))].signals,
                "degraded": reports[(int(u), int(v))].degraded,
            }
            for (u, v), mag in zip(suspicious.edges, suspicious.magnitudes)
        ]
        Path(out).write_text(json.dumps(index, indent=2), encoding="utf-8")
        click.echo(f"wrote verdict index -> {out}")


@main.command()
@click.option("--graph", required=True, type=click.Path())
@click.option(
    "--features", "stage", type=click.Choice(["raw", "raw+node"]), default="raw",
    show_default=True, help="Feature view to score on.",
)
@click.option("--k", default=5, show_default=True, help="OOF folds.")
@click.option("--out", required=True, type=click.Path(), help="z.json output.")
@click.option("--cache", type=click.Path(), default=None,
              help="Profile cache (required for raw+node).")
@click.option(
    "--backend", type=click.Choice(["mock", "remote"]), default="mock",
    show_default=True,
)
@click.option("--epochs", default=100, show_default=True)
@click.option("--batch", default=128, show_default=True)
@click.option("--hidden", default=64, show_default=True)
@click.option("--lr", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
def score(
    graph: str,
    stage: str,
    k: int,
    out: str,
    cache: str | None,
    backend: str,
    epochs: int,
    batch: int,
    hidden: int,
    lr: float,
    seed: int,
) -> None:
    """K-fold out-of-fold risk scores over the chosen feature view."""
    ds = _load_dataset(graph)
    x = ds.features.matrix
    if stage == "raw+node":
        if cache is None:
            raise click.ClickException(
                "--features raw+node needs --cache (run `l2ir profile` first)"
            )
        client = _client(backend, cache)
        cfg = PipelineConfig()
        h_node = compute_node_embeddings(ds, ds.labels, cfg, client)
        x = np.concatenate([x, h_node], axis=1)
    cfg_train = TrainConfig(
        lr=lr, epochs=epochs, batch=batch, seed=seed, hidden=hidden
    )
    try:
        scores = kfold_oof_scores(ds.graph.homo_edges(), x, ds.labels, k, cfg_train)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    scores.save(out)
    click.echo(f"scored {ds.graph.n} nodes ({stage}, K={k}) -> {out}")


@main.command(name="fuse")
@click.option("--graph", required=True, type=click.Path())
@click.option("--scores", required=True, type=click.Path(), help="z.json input.")
@click.option("--profiles", required=True, type=click.Path(), help="Profile cache dir.")
@click.option("--audits", required=True, type=click.Path(), help="Audit cache dir.")
@click.option("--out", required=True, type=click.Path(), help="H.bin output.")
@click.option(
    "--backend", type=click.Choice(["mock", "remote"]), default="mock",
    show_default=True,
)
@click.option("--tau-high", default=0.80, show_default=True)
@click.option("--tau-low", default=0.20, show_default=True)
@click.option("--budget", default=4000, show_default=True)
@click.option("--embed-dim", default=256, show_default=True)
def fuse_cmd(
    graph: str,
    scores: str,
    profiles: str,
    audits: str,
    out: str,
    backend: str,
    tau_high: float,
    tau_low: float,
    budget: int,
    embed_dim: int,
) -> None:
    """Fuse raw features with profile and pooled audit embeddings."""
    ds = _load_dataset(graph)
    z = RiskScores.load(_require(Path(scores), "l2ir score"))
    encoder = HashingTextEncoder(embed_dim)
    cfg = PipelineConfig(
        tau_high=tau_high, tau_low=tau_low, edge_budget=budget, embed_dim=embed_dim
    )
    profile_client = _client(backend, profiles)
    h_node = compute_node_embeddings(ds, ds.labels, cfg, profile_client, encoder)
    audit_client = _client(backend, audits)
    partition = partition_nodes(z, tau_high, tau_low)
    suspicious = select_suspicious(ds.graph.homo_edges(), partition, z, budget)
    reports = cross_audit(
        suspicious, ds.traces, z, audit_client, display_ids=ds.node_ids
    )
    if len(suspicious):
        vectors = np.stack(
            [encoder.encode(reports[(int(u), int(v))].text) for u, v in suspicious.edges]
        )
    else:
        vectors = np.zeros((0, embed_dim))
    h_edge = pool_all_edge_intents(ds.graph.n, suspicious, vectors, embed_dim)
    fused = fuse(ds.features.matrix, h_node, h_edge)
    fused.save(out)
    click.echo(
        f"fused features: {fused.n} x {fused.matrix.shape[1]} "
        f"(d={fused.d}, d_s={fused.d_s}, {len(suspicious)} audited edges) -> {out}"
    )


@main.command(name="train")
@click.option("--graph", required=True, type=click.Path())
@click.option("--fused", required=True, type=click.Path(), help="H.bin input.")
@click.option("--rounds", default=3, show_default=True)
@click.option("--tau-fraud", default=0.90, show_default=True)
@click.option("--tau-benign", default=0.95, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Model output.")
@click.option("--log", "log_path", required=True, type=click.Path(),
              help="Round log JSON output.")
@click.option("--epochs", default=100, show_default=True)
@click.option("--batch", default=128, show_default=True)
@click.option("--hidden", default=64, show_default=True)
@click.option("--lr", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--holdout-frac", default=0.0, show_default=True,
              help="Per-class fraction of labels held out from training.")
@click.option("--split-seed", default=0, show_default=True)
def train_cmd(
    graph: str,
    fused: str,
    rounds: int,
    tau_fraud: float,
    tau_benign: float,
    out: str,
    log_path: str,
    epochs: int,
    batch: int,
    hidden: int,
    lr: float,
    seed: int,
    holdout_frac: float,
    split_seed: int,
) -> None:
    """Self-training over fused features with pseudo-label expansion."""
    ds = _load_dataset(graph)
    fused_features = FusedFeatures.load(_require(Path(fused), "l2ir fuse"))
    if fused_features.n != ds.graph.n:
        raise click.ClickException(
            f"fused matrix has {fused_features.n} rows but graph has "
            f"{ds.graph.n} nodes"
        )
    try:
        cfg = SelfTrainConfig(
            tau_fraud=tau_fraud,
            tau_benign=tau_benign,
            rounds=rounds,
            train=TrainConfig(
                lr=lr, epochs=epochs, batch=batch, seed=seed, hidden=hidden
            ),
        )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    if holdout_frac > 0:
        labels, holdout = split_labels(
            ds.labels, 1.0 - holdout_frac, holdout_frac, split_seed
        )
    else:
        labels, holdout = ds.labels, {}
    try:
        model, log = run_self_training(
            ds.graph.homo_edges(), fused_features, labels, cfg, holdout=holdout
        )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    model.save(out)
    save_round_log(log, log_path)
    final = log[-1]
    click.echo(
        f"self-training done: {rounds} rounds, labels "
        f"{log[0].n_labeled} -> {final.n_labeled_after}; model -> {out}, "
        f"log -> {log_path}"
    )


@main.command(name="eval")
@click.option("--scores", required=True, type=click.Path(), help="z.json input.")
@click.option("--labels", "labels_path", required=True, type=click.Path(),
              help="Graph container carrying ground truth.")
@click.option("--out", required=True, type=click.Path(), help="report.json output.")
@click.option("--threshold", default=0.5, show_default=True)
def eval_cmd(scores: str, labels_path: str, out: str, threshold: float) -> None:
    """AUROC / AUPRC / MacroF1 of scores against labeled nodes."""
    z = RiskScores.load(_require(Path(scores), "l2ir score"))
    ds = _load_dataset(labels_path)
    ids = ds.labels.labeled_ids()
    if not ids:
        raise click.ClickException(f"{labels_path} carries no labels")
    y = [ds.labels.labels[v] for v in ids]
    try:
        report = metrics.write_report(z.z[ids], y, out, threshold=threshold)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(
        f"auroc {report.auroc:.4f} | auprc {report.auprc:.4f} | "
        f"macro_f1 {report.macro_f1:.4f} ({report.n_pos} pos, "
        f"{report.n_neg} neg) -> {out}"
    )


@main.command(name="synth")
@click.option("--nodes", "n_nodes", default=2000, show_default=True)
@click.option("--fraud-ratio", default=0.07, show_default=True)
@click.option("--camouflage", default=0.90, show_default=True)
@click.option("--trace-signal", default=1.0, show_default=True)
@click.option("--relations", default=2, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--feature-dim", default=16, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def synth_cmd(
    n_nodes: int,
    fraud_ratio: float,
    camouflage: float,
    trace_signal: float,
    relations: int,
    seed: int,
    feature_dim: int,
    out: str,
) -> None:
    """Generate a synthetic camouflaged review graph."""
    try:
        cfg = synth.SynthConfig(
            n_nodes=n_nodes,
            fraud_ratio=fraud_ratio,
            camouflage=camouflage,
            trace_signal=trace_signal,
            relations=relations,
            seed=seed,
            feature_dim=feature_dim,
        )
        result = synth.generate_synthetic(cfg, out)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(
        f"wrote {result.nodes_path} and {result.edges_path}: "
        f"{cfg.n_nodes} nodes ({result.n_fraud} fraud), "
        f"{result.n_edges} unique edges, connection similarity "
        f"{result.connection_similarity:.4f}"
    )


@main.command(name="run")
@click.option("--graph", required=True, type=click.Path())
@click.option(
    "--backend", type=click.Choice(["mock", "remote"]), default="mock",
    show_default=True,
)
@click.option("--cache", required=True, type=click.Path())
@click.option("--workdir", required=True, type=click.Path())
@click.option(
    "--variant", type=click.Choice(["full", "baseline"]), default="full",
    show_default=True,
)
@click.option("--train-frac", default=0.5, show_default=True)
@click.option("--holdout-frac", default=0.25, show_default=True)
@click.option("--split-seed", default=0, show_default=True)
@click.option("--folds", default=5, show_default=True)
@click.option("--rounds", default=3, show_default=True)
@click.option("--tau-fraud", default=0.90, show_default=True)
@click.option("--tau-benign", default=0.95, show_default=True)
@click.option("--tau-high", default=0.80, show_default=True)
@click.option("--tau-low", default=0.20, show_default=True)
@click.option("--budget", default=4000, show_default=True)
@click.option("--epochs", default=100, show_default=True)
@click.option("--batch", default=128, show_default=True)
@click.option("--hidden", default=64, show_default=True)
@click.option("--lr", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Holdout report JSON.")
def run_cmd(
    graph: str,
    backend: str,
    cache: str,
    workdir: str,
    variant: str,
    train_frac: float,
    holdout_frac: float,
    split_seed: int,
    folds: int,
    rounds: int,
    tau_fraud: float,
    tau_benign: float,
    tau_high: float,
    tau_low: float,
    budget: int,
    epochs: int,
    batch: int,
    hidden: int,
    lr: float,
    seed: int,
    out: str | None,
) -> None:
    """Run the whole pipeline on one graph and report holdout metrics."""
    ds = _load_dataset(graph)
    train_cfg = TrainConfig(lr=lr, epochs=epochs, batch=batch, seed=seed, hidden=hidden)
    try:
        cfg = PipelineConfig(
            folds=folds,
            tau_high=tau_high,
            tau_low=tau_low,
            edge_budget=budget,
            prelim=train_cfg,
            selftrain=SelfTrainConfig(
                tau_fraud=tau_fraud,
                tau_benign=tau_benign,
                rounds=rounds,
                train=train_cfg,
            ),
            variant=variant,
        )
        labels, holdout = split_labels(ds.labels, train_frac, holdout_frac, split_seed)
        client = _client(backend, cache) if variant == "full" else None
        result = run_pipeline(
            ds, labels, cfg, client=client, holdout=holdout, workdir=workdir
        )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(
        f"pipeline done ({variant}): {len(result.round_log)} rounds, "
        f"{result.n_audited_edges} audited edges; artifacts in {workdir}"
    )
    if holdout:
        ids = sorted(holdout)
        y = [holdout[v] for v in ids]
        report = metrics.evaluate(result.final_scores[ids], y)
        click.echo(
            f"holdout: auroc {report.auroc:.4f} | auprc {report.auprc:.4f} | "
            f"macro_f1 {report.macro_f1:.4f}"
        )
        if out:
            metrics.write_report(result.final_scores[ids], y, out)
            click.echo(f"report -> {out}")
    if client is not None:
        click.echo(
            f"llm: {client.cache_hits} cache hits, "
            f"{client.cache_misses} backend calls"
        )


if __name__ == "__main__":
    main()
