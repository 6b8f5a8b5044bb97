"""Shared builders for the test suite."""

from __future__ import annotations

import http.server
import json
import math
import threading

import numpy as np
import pytest

from l2ir.graph import (
    BehaviorTrace,
    GraphDataset,
    HeteroGraph,
    LabelStore,
    NodeFeatures,
    TraceRecord,
)

DAY = 86_400


def make_trace(rows) -> BehaviorTrace:
    """Build a trace from (item, day, rating[, text[, help]]) tuples."""
    records = []
    for r in rows:
        records.append(
            TraceRecord(
                item=r[0],
                ts=int(r[1]) * DAY,
                rating=int(r[2]),
                text=r[3] if len(r) > 3 else "",
                helpfulness=float(r[4]) if len(r) > 4 else 0.5,
            )
        )
    records.sort(key=lambda rec: rec.ts)
    return BehaviorTrace(records)


def random_trace(rng: np.random.Generator, n_items: int = 40,
                 vocab: tuple[str, ...] = ("alpha", "beta", "gamma", "delta",
                                           "echo", "fox", "golf", "hotel"),
                 max_len: int = 6) -> BehaviorTrace:
    length = int(rng.integers(0, max_len + 1))
    rows = []
    day = 0
    for _ in range(length):
        day += int(rng.integers(0, 4))
        words = " ".join(rng.choice(vocab, size=int(rng.integers(1, 5))))
        rows.append(
            (f"item_{int(rng.integers(0, n_items)):03d}", day,
             int(rng.integers(1, 6)), words, float(rng.random()))
        )
    return make_trace(rows)


def make_dataset(
    n: int,
    edges_by_rel: dict[str, list[tuple[int, int]]],
    features: np.ndarray | None = None,
    labels: dict[int, int] | None = None,
    traces: list[BehaviorTrace] | None = None,
    ids: list[str] | None = None,
) -> GraphDataset:
    if features is None:
        features = np.zeros((n, 2))
    adjacency = {
        rel: np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        for rel, pairs in edges_by_rel.items()
    }
    graph = HeteroGraph(n, list(edges_by_rel), adjacency)
    return GraphDataset(
        graph=graph,
        features=NodeFeatures(np.asarray(features, dtype=np.float64)),
        traces=traces if traces is not None else [BehaviorTrace() for _ in range(n)],
        labels=LabelStore(dict(labels or {})),
        node_ids=ids if ids is not None else [f"u{i:03d}" for i in range(n)],
    )


# ---------------------------------------------------------------------------
# Hand-computed 5-node camouflage fixture.
#
# Geometry (d=2, default gamma = 1/2):
#   x0=(0,0) x1=(1,0) x2=(0,1) x3=(2,1) x4=(2,0)
# Labels: 0,1 fraud; 2,3 benign; 4 unlabeled.
# Relation r1: (0,1) (0,2) (1,3) (2,3); relation r2: (1,4) (2,3);
# relation r3: (2,3) only (no fraud endpoint -> empty statistic).
# Homogeneous union: (0,1) (0,2) (1,3) (1,4) (2,3), five edges.
#
# Squared distances from each fraud node to its neighbors:
#   node0 -> {1: 1, 2: 1}
#   node1 -> {0: 1, 3: 2, 4: 1}  (4 only via r2)
# Behavior similarity (union)   = (e^-.5 + (2 e^-.5 + e^-1)/3) / 2
# Behavior similarity (r1 only) = (e^-.5 + (e^-.5 + e^-1)/2) / 2
# Behavior similarity (r2 only) = e^-.5            (node0 skipped: no r2 nbrs)
# Fraud-neighbor fractions: node0 1/2, node1 1/3 (union) or 1/2 (r1).
# Connection similarity (union) = (1/2 + 1/3)/2 = 5/12
# Connection similarity (r1)    = 1/2; (r2) = 0 (node1's only nbr unlabeled).
# ---------------------------------------------------------------------------

CAMO_EXPECTED = {
    "behavior_all": (math.exp(-0.5)
                     + (2.0 * math.exp(-0.5) + math.exp(-1.0)) / 3.0) / 2.0,
    "behavior_r1": (math.exp(-0.5)
                    + (math.exp(-0.5) + math.exp(-1.0)) / 2.0) / 2.0,
    "behavior_r2": math.exp(-0.5),
    "behavior_all_gamma1": (math.exp(-1.0)
                            + (2.0 * math.exp(-1.0) + math.exp(-2.0)) / 3.0) / 2.0,
    "connection_all": 5.0 / 12.0,
    "connection_r1": 0.5,
    "connection_r2": 0.0,
}


def camouflage_fixture() -> GraphDataset:
    features = np.array(
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [2.0, 0.0]]
    )
    traces = [
        make_trace([("item_a", 0, 5, "great product fast"),
                    ("item_b", 0, 5, "great value")]),
        make_trace([("item_a", 1, 5, "amazing deal buy now")]),
        make_trace([("item_c", 2, 3, "decent but slow shipping")]),
        make_trace([("item_d", 3, 2, "broke after a week")]),
        make_trace([]),
    ]
    return make_dataset(
        5,
        {
            "r1": [(0, 1), (0, 2), (1, 3), (2, 3)],
            "r2": [(1, 4), (2, 3)],
            "r3": [(2, 3)],
        },
        features=features,
        labels={0: 1, 1: 1, 2: 0, 3: 0},
        traces=traces,
    )


# ---------------------------------------------------------------------------
# Local HTTP stub for the remote backend/encoder tests.
# ---------------------------------------------------------------------------


class StubEndpoint:
    """One-shot HTTP server returning scripted (status, payload) responses."""

    def __init__(self, responses: list[tuple[int, object]]):
        self.responses = list(responses)
        self.requests: list[dict] = []
        stub = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (stdlib naming)
                length = int(self.headers.get("Content-Length", 0))
                stub.requests.append(
                    {
                        "path": self.path,
                        "headers": dict(self.headers),
                        "body": json.loads(self.rfile.read(length) or b"{}"),
                    }
                )
                status, payload = (
                    stub.responses.pop(0) if stub.responses else (500, {})
                )
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):  # silence request logging
                pass

        self.server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> "StubEndpoint":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def camo_dataset() -> GraphDataset:
    return camouflage_fixture()
