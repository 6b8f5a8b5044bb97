"""Suspicious-edge selection, cross-audits, and multi-view feature fusion.

Preliminary risk scores split nodes into a confident-fraud set and a
confident-benign set; homogeneous edges bridging the two are ranked by
score gap and the top-s are sent to the LLM for a connection-intent
audit. Encoded audit reports are mean-pooled per node and concatenated
with the raw features and the profile embeddings.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gnn import RiskScores
from .graph import BehaviorTrace
from .llm import BackendError, LLMClient
from .prompts import AuditReport, build_audit_prompt, parse_audit_report

logger = logging.getLogger(__name__)

_HBIN_MAGIC = b"L2IRHB1\n"


@dataclass(frozen=True)
class NodePartition:
    """High-confidence fraud/benign node sets under dual thresholds."""

    suspected_fraud: frozenset[int]
    suspected_benign: frozenset[int]
    tau_h: float
    tau_l: float


def partition_nodes(z, tau_h: float, tau_l: float) -> NodePartition:
    """Strict dual-threshold split; the band [tau_l, tau_h] joins neither set."""
    if not 0.0 <= tau_l < tau_h <= 1.0:
        raise ValueError(
            f"thresholds must satisfy 0 <= tau_l < tau_h <= 1, got "
            f"tau_l={tau_l}, tau_h={tau_h}"
        )
    scores = z.z if isinstance(z, RiskScores) else np.asarray(z, dtype=np.float64)
    fraud = frozenset(int(v) for v in np.nonzero(scores > tau_h)[0])
    benign = frozenset(int(v) for v in np.nonzero(scores < tau_l)[0])
    return NodePartition(
        suspected_fraud=fraud, suspected_benign=benign, tau_h=tau_h, tau_l=tau_l
    )


@dataclass(frozen=True)
class SuspiciousEdgeSet:
    """Top-s cross-partition edges ordered by descending score gap."""

    edges: np.ndarray  # (m, 2) int64, each row (min id, max id)
    magnitudes: np.ndarray  # (m,) float64, |z_u - z_v|
    budget: int

    def __len__(self) -> int:
        return self.edges.shape[0]

    def incident_counts(self, n: int) -> np.ndarray:
        counts = np.zeros(n, dtype=np.int64)
        if len(self):
            np.add.at(counts, self.edges[:, 0], 1)
            np.add.at(counts, self.edges[:, 1], 1)
        return counts


def select_suspicious(
    edges_homo: np.ndarray, partition: NodePartition, z, s: int
) -> SuspiciousEdgeSet:
    """Filter to edges with one endpoint per partition side, rank, keep top-s.

    Ordering is total: descending magnitude, then ascending (min id,
    max id), so reruns over identical scores reproduce the same list.
    """
    if s < 0:
        raise ValueError(f"budget s must be >= 0, got {s}")
    scores = z.z if isinstance(z, RiskScores) else np.asarray(z, dtype=np.float64)
    edges_homo = np.asarray(edges_homo, dtype=np.int64).reshape(-1, 2)
    if edges_homo.shape[0] == 0 or s == 0:
        return SuspiciousEdgeSet(
            edges=np.zeros((0, 2), dtype=np.int64),
            magnitudes=np.zeros(0),
            budget=s,
        )
    fraud = np.zeros(scores.size, dtype=bool)
    benign = np.zeros(scores.size, dtype=bool)
    fraud[list(partition.suspected_fraud)] = True
    benign[list(partition.suspected_benign)] = True
    u, v = edges_homo[:, 0], edges_homo[:, 1]
    cross = (fraud[u] & benign[v]) | (benign[u] & fraud[v])
    kept = edges_homo[cross]
    mag = np.abs(scores[kept[:, 0]] - scores[kept[:, 1]])
    order = np.lexsort((kept[:, 1], kept[:, 0], -mag))[:s]
    return SuspiciousEdgeSet(
        edges=kept[order], magnitudes=mag[order], budget=s
    )


def cross_audit(
    suspicious: SuspiciousEdgeSet,
    traces: list[BehaviorTrace],
    z,
    client: LLMClient,
    display_ids: list[str] | None = None,
    strict_parse: bool = False,
) -> dict[tuple[int, int], AuditReport]:
    """One parsed audit report per suspicious edge.

    Per-edge backend failures degrade to flagged placeholder reports so
    one bad request cannot sink the batch; only a fully failed batch
    raises, since that means the backend itself is down.
    """
    scores = z.z if isinstance(z, RiskScores) else np.asarray(z, dtype=np.float64)
    reports: dict[tuple[int, int], AuditReport] = {}
    if len(suspicious) == 0:
        return reports
    prompts = []
    for u, v in suspicious.edges:
        u, v = int(u), int(v)
        prompts.append(
            build_audit_prompt(
                u,
                v,
                float(scores[u]),
                float(scores[v]),
                abs(float(scores[u]) - float(scores[v])),
                traces[u],
                traces[v],
                display_u=display_ids[u] if display_ids else None,
                display_v=display_ids[v] if display_ids else None,
            )
        )
    failures = 0
    for (u, v), prompt in zip(suspicious.edges, prompts):
        edge = (int(u), int(v))
        try:
            text = client.complete(prompt)
        except BackendError as exc:
            failures += 1
            logger.warning("audit failed for edge %s: %s", edge, exc)
            reports[edge] = AuditReport(edge=edge, text="", degraded=True)
            continue
        reports[edge] = parse_audit_report(text, edge=edge, strict=strict_parse)
    if failures == len(suspicious):
        raise BackendError(
            f"all {failures} audit requests failed; backend appears down"
        )
    if failures:
        logger.warning("%d/%d audits degraded to placeholders", failures, len(suspicious))
    return reports


def pool_edge_intent(
    v: int, embeddings: list[np.ndarray], d_s: int
) -> np.ndarray:
    """Mean of the incident suspicious-edge embeddings; zeros when none."""
    if not embeddings:
        return np.zeros(d_s)
    stack = np.stack(embeddings)
    if stack.shape[1] != d_s:
        raise ValueError(f"edge embeddings have dim {stack.shape[1]}, expected {d_s}")
    return stack.mean(axis=0)


def pool_all_edge_intents(
    n: int,
    suspicious: SuspiciousEdgeSet,
    edge_vectors: np.ndarray,
    d_s: int,
) -> np.ndarray:
    """Per-node mean pooling over incident suspicious edges, vectorized.

    ``edge_vectors`` rows align with ``suspicious.edges``; each edge
    contributes the same vector to both endpoints.
    """
    pooled = np.zeros((n, d_s))
    m = len(suspicious)
    if m == 0:
        return pooled
    edge_vectors = np.asarray(edge_vectors, dtype=np.float64)
    if edge_vectors.shape != (m, d_s):
        raise ValueError(
            f"edge vector matrix shape {edge_vectors.shape} != ({m}, {d_s})"
        )
    counts = np.zeros(n)
    for col in range(2):
        np.add.at(pooled, suspicious.edges[:, col], edge_vectors)
        np.add.at(counts, suspicious.edges[:, col], 1.0)
    nonzero = counts > 0
    pooled[nonzero] /= counts[nonzero, None]
    return pooled


@dataclass
class FusedFeatures:
    """Concatenated [raw ‖ profile embedding ‖ pooled edge embedding] rows."""

    matrix: np.ndarray
    d: int
    d_s: int

    def __post_init__(self) -> None:
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("fused matrix must be 2-D")
        if self.matrix.shape[1] != self.d + 2 * self.d_s:
            raise ValueError(
                f"fused width {self.matrix.shape[1]} != d + 2*d_s = "
                f"{self.d + 2 * self.d_s}"
            )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def raw_block(self) -> np.ndarray:
        return self.matrix[:, : self.d]

    def node_block(self) -> np.ndarray:
        return self.matrix[:, self.d : self.d + self.d_s]

    def edge_block(self) -> np.ndarray:
        return self.matrix[:, self.d + self.d_s :]

    def save(self, path: str | Path) -> None:
        """Row-major float64 matrix behind a one-line JSON header."""
        header = json.dumps({"n": self.n, "d": self.d, "d_s": self.d_s}).encode()
        with open(path, "wb") as fh:
            fh.write(_HBIN_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(self.matrix.tobytes(order="C"))

    @classmethod
    def load(cls, path: str | Path) -> "FusedFeatures":
        with open(path, "rb") as fh:
            magic = fh.read(len(_HBIN_MAGIC))
            if magic != _HBIN_MAGIC:
                raise ValueError(f"{path}: not a fused-feature file")
            (header_len,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(header_len).decode())
            n, d, d_s = header["n"], header["d"], header["d_s"]
            data = np.frombuffer(fh.read(), dtype=np.float64).copy()
        width = d + 2 * d_s
        if data.size != n * width:
            raise ValueError(
                f"{path}: payload holds {data.size} values, expected {n * width}"
            )
        return cls(matrix=data.reshape(n, width), d=d, d_s=d_s)


def fuse(x: np.ndarray, h_node: np.ndarray, h_edge: np.ndarray) -> FusedFeatures:
    """Concatenate the three views; strict shape agreement."""
    x = np.asarray(x, dtype=np.float64)
    h_node = np.asarray(h_node, dtype=np.float64)
    h_edge = np.asarray(h_edge, dtype=np.float64)
    if not (x.shape[0] == h_node.shape[0] == h_edge.shape[0]):
        raise ValueError(
            f"row mismatch: x has {x.shape[0]}, h_node {h_node.shape[0]}, "
            f"h_edge {h_edge.shape[0]}"
        )
    if h_node.shape[1] != h_edge.shape[1]:
        raise ValueError(
            f"embedding blocks disagree: {h_node.shape[1]} vs {h_edge.shape[1]}"
        )
    matrix = np.concatenate([x, h_node, h_edge], axis=1)
    return FusedFeatures(matrix=matrix, d=x.shape[1], d_s=h_node.shape[1])
