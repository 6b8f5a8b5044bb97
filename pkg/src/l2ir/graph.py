"""Multi-relation graph container: JSONL ingest, homogeneous projection,
label bookkeeping, and camouflage statistics.

Node ids are dense integers 0..N-1 assigned in nodes-file order; the
original string ids are kept as a sidecar on :class:`GraphDataset`.
Edges are undirected and stored as (min_id, max_id) pairs, deduplicated
per relation.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ALL_RELATIONS = "ALL"

GROUND_TRUTH = "ground_truth"

_MAGIC = b"L2IRDS1\n"


class IngestError(ValueError):
    """Malformed input file; message carries path and line number."""


class EmptyStatisticError(ValueError):
    """No qualifying fraud node for a camouflage statistic."""


@dataclass
class TraceRecord:
    """One review interaction."""

    item: str
    ts: int
    rating: int
    text: str
    helpfulness: float

    def as_list(self) -> list:
        return [self.item, self.ts, self.rating, self.text, self.helpfulness]

    @classmethod
    def from_list(cls, row: list) -> "TraceRecord":
        return cls(item=row[0], ts=row[1], rating=row[2], text=row[3],
                   helpfulness=row[4])


@dataclass
class BehaviorTrace:
    """Chronologically sorted interaction records of one node."""

    records: list[TraceRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        ts = [r.ts for r in self.records]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("trace timestamps must be non-decreasing")
        for r in self.records:
            if not 1 <= r.rating <= 5:
                raise ValueError(f"rating {r.rating} outside 1..5")

    def __len__(self) -> int:
        return len(self.records)

    def item_set(self) -> set[str]:
        return {r.item for r in self.records}

    def full_text(self) -> str:
        return " ".join(r.text for r in self.records)

    def ratings(self) -> list[int]:
        return [r.rating for r in self.records]

    def avg_rating(self) -> float:
        if not self.records:
            return 0.0
        return sum(self.ratings()) / len(self.records)


@dataclass
class NodeFeatures:
    """Per-node statistical feature matrix; all values finite, fixed width."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("feature matrix must be 2-dimensional")
        if not np.all(np.isfinite(m)):
            raise ValueError("feature matrix contains non-finite values")
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


class HeteroGraph:
    """Undirected multi-relation graph over nodes 0..n-1.

    ``adjacency`` maps relation name to an (m, 2) int64 array of
    (min_id, max_id) pairs, unique and lexicographically sorted.
    """

    def __init__(self, n: int, relations: list[str],
                 adjacency: dict[str, np.ndarray]):
        if set(relations) != set(adjacency):
            raise ValueError("relations and adjacency keys must match")
        self.n = int(n)
        self.relations = list(relations)
        self.adjacency: dict[str, np.ndarray] = {}
        for rel in relations:
            edges = np.asarray(adjacency[rel], dtype=np.int64).reshape(-1, 2)
            self.adjacency[rel] = _canonical_edges(edges, self.n, rel)
        self._homo: np.ndarray | None = None
        self._csr_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def edge_count(self, relation: str = ALL_RELATIONS) -> int:
        if relation == ALL_RELATIONS:
            return self.homo_edges().shape[0]
        return self.adjacency[relation].shape[0]

    def homo_edges(self) -> np.ndarray:
        """Deduplicated union of all per-relation edge sets (idempotent)."""
        if self._homo is None:
            if self.relations:
                stacked = np.vstack([self.adjacency[r] for r in self.relations])
            else:
                stacked = np.empty((0, 2), dtype=np.int64)
            self._homo = np.unique(stacked, axis=0) if stacked.size else stacked
        return self._homo

    def neighbors(self, v: int, relation: str = ALL_RELATIONS) -> np.ndarray:
        indptr, indices = self._csr(relation)
        return indices[indptr[v]:indptr[v + 1]]

    def _csr(self, relation: str) -> tuple[np.ndarray, np.ndarray]:
        if relation not in self._csr_cache:
            if relation == ALL_RELATIONS:
                edges = self.homo_edges()
            elif relation in self.adjacency:
                edges = self.adjacency[relation]
            else:
                raise KeyError(f"unknown relation {relation!r}")
            self._csr_cache[relation] = _edges_to_csr(self.n, edges)
        return self._csr_cache[relation]


def _canonical_edges(edges: np.ndarray, n: int, rel: str) -> np.ndarray:
    if edges.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if edges.min() < 0 or edges.max() >= n:
        raise ValueError(f"relation {rel!r}: edge endpoint outside [0, {n})")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise ValueError(f"relation {rel!r}: self-loops are not allowed")
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


def _edges_to_csr(n: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dst.astype(np.int64)


class LabelStore:
    """Labeled/unlabeled node partition with per-round pseudo-label history.

    Ground-truth entries can never be overwritten, and the labeled set only
    grows across rounds.
    """

    def __init__(self, labels: dict[int, int] | None = None,
                 provenance: dict[int, str] | None = None, round_: int = 0):
        self.labels: dict[int, int] = dict(labels or {})
        if provenance is None:
            provenance = {v: GROUND_TRUTH for v in self.labels}
        self.provenance: dict[int, str] = dict(provenance)
        self.round = int(round_)
        if set(self.labels) != set(self.provenance):
            raise ValueError("labels and provenance must cover the same nodes")
        for v, y in self.labels.items():
            if y not in (0, 1):
                raise ValueError(f"node {v}: label must be 0 or 1, got {y}")

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, v: int) -> bool:
        return v in self.labels

    def labeled_ids(self) -> list[int]:
        return sorted(self.labels)

    def unlabeled_ids(self, n: int) -> list[int]:
        return [v for v in range(n) if v not in self.labels]

    def ids_of_class(self, label: int) -> list[int]:
        return sorted(v for v, y in self.labels.items() if y == label)

    def is_ground_truth(self, v: int) -> bool:
        return self.provenance.get(v) == GROUND_TRUTH

    def copy(self) -> "LabelStore":
        return LabelStore(self.labels, self.provenance, self.round)

    def with_pseudo(self, fraud_ids, benign_ids, round_: int) -> "LabelStore":
        """New store with pseudo-labels merged in; rejects relabeling."""
        labels = dict(self.labels)
        provenance = dict(self.provenance)
        tag = f"pseudo_round_{round_}"
        for ids, y in ((fraud_ids, 1), (benign_ids, 0)):
            for v in sorted(ids):
                if v in labels:
                    raise ValueError(f"node {v} is already labeled; "
                                     "pseudo-labels may only cover unlabeled nodes")
                labels[v] = y
                provenance[v] = tag
        return LabelStore(labels, provenance, round_ + 1)


@dataclass
class GraphDataset:
    """Everything loaded from one nodes/edges file pair."""

    graph: HeteroGraph
    features: NodeFeatures
    traces: list[BehaviorTrace]
    labels: LabelStore
    node_ids: list[str]

    def __post_init__(self) -> None:
        n = self.graph.n
        if self.features.n != n or len(self.traces) != n or len(self.node_ids) != n:
            raise ValueError("node count mismatch across dataset components")
        for v in self.labels.labels:
            if not 0 <= v < n:
                raise ValueError(f"labeled node {v} outside [0, {n})")

    def index_of(self, node_id: str) -> int:
        try:
            return self.node_ids.index(node_id)
        except ValueError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def save(self, path: str | Path) -> None:
        save_dataset(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "GraphDataset":
        return load_dataset(path)


def load_graph(nodes_path: str | Path, edges_path: str | Path) -> GraphDataset:
    """Parse a nodes.jsonl / edges.jsonl pair into a validated dataset.

    Self-loops and unknown endpoints are rejected with the offending line
    number; duplicate edges within a relation are silently deduplicated.
    """
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    node_ids: list[str] = []
    index: dict[str, int] = {}
    feature_rows: list[list[float]] = []
    traces: list[BehaviorTrace] = []
    labels: dict[int, int] = {}
    dim: int | None = None

    for lineno, obj in _iter_jsonl(nodes_path):
        where = f"{nodes_path}:{lineno}"
        nid = obj.get("id")
        if not isinstance(nid, str):
            raise IngestError(f"{where}: 'id' must be a string")
        if nid in index:
            raise IngestError(f"{where}: duplicate node id {nid!r}")
        feats = obj.get("features")
        if not isinstance(feats, list) or not feats:
            raise IngestError(f"{where}: 'features' must be a non-empty list")
        row = [float(x) for x in feats]
        if not all(np.isfinite(row)):
            raise IngestError(f"{where}: non-finite feature value")
        if dim is None:
            dim = len(row)
        elif len(row) != dim:
            raise IngestError(
                f"{where}: feature dimension {len(row)} != expected {dim}")
        label = obj.get("label")
        if label is not None and label not in (0, 1):
            raise IngestError(f"{where}: 'label' must be 0, 1, or absent")
        try:
            trace = _parse_trace(obj.get("traces", []))
        except (TypeError, KeyError, ValueError) as exc:
            raise IngestError(f"{where}: bad trace record: {exc}") from None

        v = len(node_ids)
        node_ids.append(nid)
        index[nid] = v
        feature_rows.append(row)
        traces.append(trace)
        if label is not None:
            labels[v] = int(label)

    if not node_ids:
        raise IngestError(f"{nodes_path}: no nodes")

    relations: list[str] = []
    edges_by_rel: dict[str, set[tuple[int, int]]] = {}
    for lineno, obj in _iter_jsonl(edges_path):
        where = f"{edges_path}:{lineno}"
        rel = obj.get("relation")
        if not isinstance(rel, str):
            raise IngestError(f"{where}: 'relation' must be a string")
        try:
            u = index[obj["src"]]
            v = index[obj["dst"]]
        except KeyError as exc:
            raise IngestError(f"{where}: unknown endpoint {exc.args[0]!r}") from None
        if u == v:
            raise IngestError(f"{where}: self-loop on {obj['src']!r}")
        if rel not in edges_by_rel:
            relations.append(rel)
            edges_by_rel[rel] = set()
        edges_by_rel[rel].add((min(u, v), max(u, v)))

    adjacency = {
        rel: np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        for rel, pairs in edges_by_rel.items()
    }
    graph = HeteroGraph(len(node_ids), relations, adjacency)
    return GraphDataset(graph=graph, features=NodeFeatures(np.array(feature_rows)),
                        traces=traces, labels=LabelStore(labels),
                        node_ids=node_ids)


def _iter_jsonl(path: Path):
    if not path.exists():
        raise IngestError(f"{path}: file not found")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def _parse_trace(raw: list) -> BehaviorTrace:
    records = []
    for r in raw:
        records.append(TraceRecord(
            item=str(r["item"]), ts=int(r["ts"]), rating=int(r["rating"]),
            text=str(r.get("text", "")), helpfulness=float(r.get("help", 0.0)),
        ))
    records.sort(key=lambda rec: rec.ts)
    return BehaviorTrace(records)


def homogeneous_projection(graph: HeteroGraph) -> np.ndarray:
    """Deduplicated union of all per-relation edge sets."""
    return graph.homo_edges()


def behavior_similarity(graph: HeteroGraph, features: NodeFeatures,
                        labels: LabelStore, relation: str = ALL_RELATIONS,
                        gamma: float | None = None) -> float:
    """Mean over fraud nodes of the mean RBF similarity to their neighbors.

    gamma defaults to 1/d. Raises EmptyStatisticError when no fraud node
    has a neighbor under the relation.
    """
    if gamma is None:
        gamma = 1.0 / features.dim
    x = features.matrix
    per_node = []
    for v in labels.ids_of_class(1):
        nbrs = graph.neighbors(v, relation)
        if nbrs.size == 0:
            continue
        d2 = np.sum((x[nbrs] - x[v]) ** 2, axis=1)
        per_node.append(float(np.mean(np.exp(-gamma * d2))))
    if not per_node:
        raise EmptyStatisticError(
            f"no fraud node with neighbors under relation {relation!r}")
    return float(np.mean(per_node))


def connection_similarity(graph: HeteroGraph, labels: LabelStore,
                          relation: str = ALL_RELATIONS) -> float:
    """Mean over fraud nodes of the fraction of their neighbors that are fraud."""
    per_node = []
    for v in labels.ids_of_class(1):
        nbrs = graph.neighbors(v, relation)
        if nbrs.size == 0:
            continue
        n_fraud = sum(1 for u in nbrs if labels.labels.get(int(u)) == 1)
        per_node.append(n_fraud / nbrs.size)
    if not per_node:
        raise EmptyStatisticError(
            f"no fraud node with neighbors under relation {relation!r}")
    return float(np.mean(per_node))


def save_dataset(ds: GraphDataset, path: str | Path) -> None:
    """Binary container: JSON header + raw edge and feature arrays.

    Round-trips bit-identically: floats in the header rely on repr
    round-tripping; the feature matrix is stored as raw bytes.
    """
    header = {
        "n": ds.graph.n,
        "relations": ds.graph.relations,
        "node_ids": ds.node_ids,
        "feature_dim": ds.features.dim,
        "labels": {str(v): y for v, y in sorted(ds.labels.labels.items())},
        "provenance": {str(v): p for v, p in sorted(ds.labels.provenance.items())},
        "round": ds.labels.round,
        "traces": [[r.as_list() for r in t.records] for t in ds.traces],
        "edge_counts": [int(ds.graph.adjacency[r].shape[0])
                        for r in ds.graph.relations],
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for rel in ds.graph.relations:
        buf.write(np.ascontiguousarray(ds.graph.adjacency[rel]).tobytes())
    buf.write(np.ascontiguousarray(ds.features.matrix).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_dataset(path: str | Path) -> GraphDataset:
    raw = Path(path).read_bytes()
    if raw[:len(_MAGIC)] != _MAGIC:
        raise IngestError(f"{path}: not a graph container (bad magic)")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    adjacency = {}
    for rel, m in zip(header["relations"], header["edge_counts"]):
        nbytes = m * 2 * 8
        adjacency[rel] = np.frombuffer(
            raw, dtype=np.int64, count=m * 2, offset=off).reshape(m, 2).copy()
        off += nbytes
    n, d = header["n"], header["feature_dim"]
    feats = np.frombuffer(raw, dtype=np.float64, count=n * d,
                          offset=off).reshape(n, d).copy()
    graph = HeteroGraph(n, header["relations"], adjacency)
    labels = LabelStore({int(v): y for v, y in header["labels"].items()},
                        {int(v): p for v, p in header["provenance"].items()},
                        header["round"])
    traces = [BehaviorTrace([TraceRecord.from_list(r) for r in rows])
              for rows in header["traces"]]
    return GraphDataset(graph=graph, features=NodeFeatures(feats), traces=traces,
                        labels=labels, node_ids=header["node_ids"])
