"""Synthetic camouflaged review graphs for end-to-end verification.

The generator plants a known fraud cohort whose graph neighborhoods are
mostly benign (the camouflage knob sets the benign-neighbor fraction)
and whose behavior traces carry class-discriminative structure only to
the extent ``trace_signal`` allows: at 0 the two classes draw traces
from identical distributions, so any downstream class signal recovered
from trace-derived text is a leak.

Two independent RNG streams keep the controls clean: graph structure,
labels, and features come from one stream, traces from another, so
changing ``trace_signal`` never perturbs the graph or the features.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

_TRACE_STREAM_OFFSET = 777_013
_SECONDS_PER_DAY = 86_400

_BASE_RATING_P = (0.05, 0.10, 0.20, 0.30, 0.35)

_BASE_VOCAB = (
    "the shipping arrived box works fine item color size fits daily use "
    "after week month still doing job battery screen cover manual setup "
    "easy enough value price paid store brand second one family kitchen "
    "office travel light heavy small large update review stars material "
    "plastic metal fabric charge holds clean water surface design handle"
).split()

_FRAUD_VOCAB = (
    "amazing unbelievable deal buy instantly discount bargain lifechanging "
    "musthave perfect flawless incredible"
).split()

_POSITIVE = ("great", "good", "excellent", "love", "recommend")
_NEGATIVE = ("bad", "poor", "terrible", "broken", "refund")


class SynthesisError(ValueError):
    """The requested wiring cannot be realized at the given sizes."""


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; camouflage is the benign-neighbor target for fraud."""

    n_nodes: int = 2000
    fraud_ratio: float = 0.07
    camouflage: float = 0.90
    relations: int = 2
    trace_signal: float = 1.0
    seed: int = 7
    feature_dim: int = 16
    feature_separation: float = 1.2
    avg_degree: float = 8.0
    background_degree: float = 6.0
    reviews_mean: float = 4.0
    duplicate_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise ValueError(f"n_nodes must be >= 2, got {self.n_nodes}")
        if not 0.0 < self.fraud_ratio < 1.0:
            raise ValueError(f"fraud_ratio must lie in (0, 1), got {self.fraud_ratio}")
        if not 0.0 <= self.camouflage <= 1.0:
            raise ValueError(f"camouflage must lie in [0, 1], got {self.camouflage}")
        if not 0.0 <= self.trace_signal <= 1.0:
            raise ValueError(
                f"trace_signal must lie in [0, 1], got {self.trace_signal}"
            )
        if self.relations < 1:
            raise ValueError(f"relations must be >= 1, got {self.relations}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.avg_degree < 1.0:
            raise ValueError(f"avg_degree must be >= 1, got {self.avg_degree}")


@dataclass
class SynthResult:
    nodes_path: Path
    edges_path: Path
    meta_path: Path
    n_fraud: int
    n_edges: int
    connection_similarity: float


def _check_feasible(cfg: SynthConfig, n_fraud: int, n_benign: int, degree: int) -> None:
    if n_fraud < 1:
        raise SynthesisError(
            f"fraud_ratio {cfg.fraud_ratio} yields no fraud nodes at "
            f"n={cfg.n_nodes}"
        )
    if n_benign < 1:
        raise SynthesisError(
            f"fraud_ratio {cfg.fraud_ratio} leaves no benign nodes at "
            f"n={cfg.n_nodes}"
        )
    if cfg.camouflage < 1.0 and n_fraud < 2:
        raise SynthesisError(
            f"camouflage {cfg.camouflage} needs fraud-fraud edges but only "
            f"{n_fraud} fraud node exists"
        )
    wanted_benign = int(np.ceil(degree * cfg.camouflage))
    if wanted_benign > n_benign:
        raise SynthesisError(
            f"camouflage {cfg.camouflage} at degree {degree} needs up to "
            f"{wanted_benign} distinct benign partners but only {n_benign} exist"
        )


def _wire(
    cfg: SynthConfig, rng: np.random.Generator, is_fraud: np.ndarray
) -> np.ndarray:
    """Undirected edge list hitting the camouflage target in expectation.

    Every fraud node gets a fixed total degree D on this side of the
    construction: a stochastically rounded D*(1-camouflage) fraud-fraud
    stubs and the remainder as distinct benign partners, so the mean
    fraud-neighbor fraction over fraud nodes concentrates tightly on
    1 - camouflage. Benign-benign background edges are G(n, p)-style.
    """
    fraud_ids = np.nonzero(is_fraud)[0]
    benign_ids = np.nonzero(~is_fraud)[0]
    degree = int(round(cfg.avg_degree))
    _check_feasible(cfg, fraud_ids.size, benign_ids.size, degree)

    ff_target = degree * (1.0 - cfg.camouflage)
    base = int(np.floor(ff_target))
    frac = ff_target - base
    k_ff = base + (rng.random(fraud_ids.size) < frac).astype(np.int64)
    k_ff = np.minimum(k_ff, degree)

    edges: set[tuple[int, int]] = set()

    stubs = np.repeat(fraud_ids, k_ff)
    rng.shuffle(stubs)
    if stubs.size % 2:
        stubs = stubs[:-1]
    for u, v in stubs.reshape(-1, 2):
        if u != v:
            edges.add((min(int(u), int(v)), max(int(u), int(v))))

    for v, k in zip(fraud_ids, degree - k_ff):
        partners = rng.choice(benign_ids, size=int(k), replace=False)
        for b in partners:
            edges.add((min(int(v), int(b)), max(int(v), int(b))))

    n_bb = int(round(benign_ids.size * cfg.background_degree / 2.0))
    if benign_ids.size >= 2 and n_bb:
        pairs = rng.integers(0, benign_ids.size, size=(n_bb, 2))
        for a, b in pairs:
            if a != b:
                u, v = int(benign_ids[a]), int(benign_ids[b])
                edges.add((min(u, v), max(u, v)))

    return np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)


def _trace_rows(
    cfg: SynthConfig,
    rng: np.random.Generator,
    fraud: bool,
    n_items: int,
    campaign: np.ndarray,
) -> list[dict]:
    g = cfg.trace_signal
    count = int(rng.poisson(cfg.reviews_mean))
    burst_day = int(rng.integers(0, 365)) if fraud else 0
    rows = []
    for _ in range(count):
        if fraud and rng.random() < 0.5 * g:
            item = int(campaign[rng.integers(0, campaign.size)])
        else:
            item = int(rng.integers(0, n_items))
        if fraud and rng.random() < g:
            rating = 5
        else:
            rating = int(rng.choice(5, p=_BASE_RATING_P)) + 1
        if fraud and rng.random() < g:
            day = burst_day
        else:
            day = int(rng.integers(0, 365))
        ts = day * _SECONDS_PER_DAY + int(rng.integers(0, _SECONDS_PER_DAY))
        length = int(rng.integers(5, 11))
        tokens = []
        for _ in range(length):
            if fraud and rng.random() < 0.5 * g:
                tokens.append(_FRAUD_VOCAB[rng.integers(0, len(_FRAUD_VOCAB))])
            else:
                tokens.append(_BASE_VOCAB[rng.integers(0, len(_BASE_VOCAB))])
        if rating >= 4 and rng.random() < 0.5:
            tokens.append(_POSITIVE[rng.integers(0, len(_POSITIVE))])
        elif rating <= 2 and rng.random() < 0.5:
            tokens.append(_NEGATIVE[rng.integers(0, len(_NEGATIVE))])
        if fraud and rng.random() < g:
            help_score = round(float(0.4 * rng.random()), 3)
        else:
            help_score = round(float(0.2 + 0.75 * rng.random()), 3)
        rows.append(
            {
                "item": f"item_{item:04d}",
                "ts": ts,
                "rating": rating,
                "text": " ".join(tokens),
                "help": help_score,
            }
        )
    rows.sort(key=lambda r: r["ts"])
    return rows


def _realized_connection_similarity(
    edges: np.ndarray, is_fraud: np.ndarray
) -> float:
    n = is_fraud.size
    fraud_nbrs = np.zeros(n)
    total_nbrs = np.zeros(n)
    for u, v in edges:
        total_nbrs[u] += 1
        total_nbrs[v] += 1
        fraud_nbrs[u] += is_fraud[v]
        fraud_nbrs[v] += is_fraud[u]
    mask = is_fraud & (total_nbrs > 0)
    if not mask.any():
        raise SynthesisError("no fraud node received any edge")
    return float(np.mean(fraud_nbrs[mask] / total_nbrs[mask]))


def generate_synthetic(cfg: SynthConfig, out_dir: str | Path) -> SynthResult:
    """Write nodes.jsonl, edges.jsonl, and meta.json; byte-identical per seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng_graph = np.random.default_rng(cfg.seed)
    rng_trace = np.random.default_rng(cfg.seed + _TRACE_STREAM_OFFSET)

    n = cfg.n_nodes
    n_fraud = int(round(n * cfg.fraud_ratio))
    is_fraud = np.zeros(n, dtype=bool)
    fraud_ids = rng_graph.choice(n, size=n_fraud, replace=False) if n_fraud else []
    is_fraud[fraud_ids] = True

    delta = cfg.feature_separation / np.sqrt(cfg.feature_dim)
    features = rng_graph.standard_normal((n, cfg.feature_dim))
    features[is_fraud] += delta

    edges = _wire(cfg, rng_graph, is_fraud)
    rel_of = rng_graph.integers(0, cfg.relations, size=edges.shape[0])
    rows = [
        (int(u), int(v), int(r)) for (u, v), r in zip(edges, rel_of)
    ]
    if cfg.relations >= 2 and cfg.duplicate_fraction > 0 and edges.shape[0]:
        n_dup = int(round(cfg.duplicate_fraction * edges.shape[0]))
        n_dup = min(n_dup, edges.shape[0])
        picked = rng_graph.choice(edges.shape[0], size=n_dup, replace=False)
        shifts = rng_graph.integers(1, cfg.relations, size=n_dup)
        for idx, shift in zip(picked, shifts):
            u, v = edges[idx]
            rows.append((int(u), int(v), int((rel_of[idx] + shift) % cfg.relations)))
    rows.sort(key=lambda t: (t[2], t[0], t[1]))

    n_items = max(20, n // 2)
    campaign = rng_trace.choice(n_items, size=min(20, n_items), replace=False)

    nodes_path = out / "nodes.jsonl"
    with nodes_path.open("w", encoding="utf-8") as fh:
        for v in range(n):
            record = {
                "id": f"u{v:05d}",
                "features": [float(x) for x in features[v]],
                "label": int(is_fraud[v]),
                "traces": _trace_rows(
                    cfg, rng_trace, bool(is_fraud[v]), n_items, campaign
                ),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    edges_path = out / "edges.jsonl"
    with edges_path.open("w", encoding="utf-8") as fh:
        for u, v, r in rows:
            fh.write(
                json.dumps(
                    {"src": f"u{u:05d}", "dst": f"u{v:05d}", "relation": f"rel_{r}"}
                )
                + "\n"
            )

    conn_sim = _realized_connection_similarity(edges, is_fraud)
    meta = {
        "config": asdict(cfg),
        "n_fraud": n_fraud,
        "n_edges_unique": int(edges.shape[0]),
        "n_edge_rows": len(rows),
        "connection_similarity": conn_sim,
        "mean_degree": float(2.0 * edges.shape[0] / n),
    }
    meta_path = out / "meta.json"
    meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return SynthResult(
        nodes_path=nodes_path,
        edges_path=edges_path,
        meta_path=meta_path,
        n_fraud=n_fraud,
        n_edges=int(edges.shape[0]),
        connection_similarity=conn_sim,
    )
