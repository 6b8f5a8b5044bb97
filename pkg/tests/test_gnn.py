"""GNN engine: forward oracles, gradient checks, training, OOF scoring."""

import math

import numpy as np
import pytest

import l2ir.gnn as gnn_module
from l2ir.gnn import (
    DegenerateSupervisionError,
    GnnModel,
    NormalizedAdjacency,
    RiskScores,
    TrainConfig,
    TrainResult,
    backward,
    bce_loss,
    forward,
    init_model,
    kfold_oof_scores,
    stratified_folds,
    train,
)
from l2ir.graph import LabelStore
from tests.oracles import (
    dense_normalized_adjacency,
    finite_difference_grads,
    max_relative_error,
    random_graph_edges,
)

LINE_EDGES = np.array([[0, 1], [1, 2], [2, 3]], dtype=np.int64)


def _zero_model(d_in, hidden):
    return GnnModel(w1=np.zeros((d_in, hidden)), b1=np.zeros(hidden),
                    w2=np.zeros((hidden, 1)), b2=np.zeros(1))


class TestNormalizedAdjacency:
    def test_two_node_hand_values(self):
        adj = NormalizedAdjacency(2, np.array([[0, 1]]))
        out = adj.matmul(np.eye(2))
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_matches_dense_oracle_on_random_graphs(self):
        rng = np.random.default_rng(5)
        for n in (1, 4, 17, 40):
            edges = random_graph_edges(rng, n, 3 * n)
            dense = dense_normalized_adjacency(n, edges)
            x = rng.normal(size=(n, 5))
            got = NormalizedAdjacency(n, edges).matmul(np.ascontiguousarray(x))
            np.testing.assert_allclose(got, dense @ x, atol=1e-12)

    def test_isolated_node_keeps_own_features(self):
        # node 2 is isolated: its row of A-hat is just the self-loop
        adj = NormalizedAdjacency(3, np.array([[0, 1]]))
        x = np.array([[1.0], [2.0], [7.0]])
        out = adj.matmul(x)
        assert out[2, 0] == pytest.approx(7.0, abs=1e-15)


class TestForward:
    def test_zero_model_outputs_half(self):
        x = np.random.default_rng(0).normal(size=(6, 3))
        p = forward(_zero_model(3, 4), LINE_EDGES, x[:4])
        np.testing.assert_allclose(p, 0.5, atol=1e-15)

    def test_bias_only_model(self):
        model = _zero_model(2, 3)
        model.b2[0] = 5.0
        p = forward(model, np.zeros((0, 2), dtype=np.int64), np.zeros((4, 2)))
        np.testing.assert_allclose(p, 1.0 / (1.0 + math.exp(-5.0)), atol=1e-15)

    def test_line_graph_hand_computed(self):
        # A-hat for path 0-1-2-3 with self-loops: degrees 2, 3, 3, 2
        r6 = 1.0 / math.sqrt(6.0)
        a_hat = np.array([
            [1 / 2, r6, 0, 0],
            [r6, 1 / 3, 1 / 3, 0],
            [0, 1 / 3, 1 / 3, r6],
            [0, 0, r6, 1 / 2],
        ])
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        model = GnnModel(w1=np.array([[1.0]]), b1=np.zeros(1),
                         w2=np.array([[1.0]]), b2=np.zeros(1))
        z1 = a_hat @ x
        want = 1.0 / (1.0 + np.exp(-(a_hat @ np.maximum(z1, 0.0))))
        got = forward(model, LINE_EDGES, x)
        np.testing.assert_allclose(got, want.ravel(), atol=1e-12)
        # spot value for node 0: z1_0 = 1/2 + 2/sqrt(6)
        assert z1[0, 0] == pytest.approx(0.5 + 2.0 * r6, abs=1e-15)

    def test_isolated_node_output_independent_of_others(self):
        rng = np.random.default_rng(6)
        model = init_model(3, 4, seed=1)
        x = rng.normal(size=(5, 3))
        edges = np.array([[0, 1], [1, 2], [2, 3]])  # node 4 isolated
        base = forward(model, edges, x)
        x2 = x.copy()
        x2[:4] += rng.normal(size=(4, 3))
        moved = forward(model, edges, x2)
        assert moved[4] == pytest.approx(base[4], abs=1e-15)
        assert not np.allclose(moved[:4], base[:4])

    def test_feature_width_mismatch(self):
        with pytest.raises(ValueError, match="feature width"):
            forward(init_model(3, 2, 0), LINE_EDGES, np.zeros((4, 5)))


class TestBceLoss:
    def test_half_probabilities_give_ln2(self):
        assert bce_loss(np.full(9, 0.5), np.r_[np.ones(4), np.zeros(5)]) == \
            pytest.approx(math.log(2.0), abs=1e-15)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        p = rng.uniform(0.01, 0.99, size=50)
        y = (rng.random(50) < 0.4).astype(float)
        want = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert bce_loss(p, y) == pytest.approx(want, abs=1e-15)

    def test_clamps_extreme_probabilities(self):
        loss = bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert np.isfinite(loss)
        assert loss == pytest.approx(-math.log(1e-7), rel=1e-9)

    def test_errors(self):
        with pytest.raises(ValueError, match="at least one"):
            bce_loss(np.zeros(0), np.zeros(0))
        with pytest.raises(ValueError, match="mismatch"):
            bce_loss(np.zeros(3), np.zeros(2))


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        n, d, hidden = 12, 5, 4
        edges = random_graph_edges(rng, n, 30)
        x = rng.normal(size=(n, d))
        model = init_model(d, hidden, seed=3)
        ids = np.array([0, 2, 5, 7, 7, 11])  # includes a duplicate
        y = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        analytic = backward(model, edges, x, (ids, y))
        numeric = finite_difference_grads(model, edges, x, ids, y, h=1e-5)
        got = {"w1": analytic.w1, "b1": analytic.b1,
               "w2": analytic.w2, "b2": analytic.b2}
        assert max_relative_error(got, numeric) < 1e-4

    def test_zero_model_balanced_batch_is_stationary(self):
        x = np.random.default_rng(9).normal(size=(4, 3))
        grads = backward(_zero_model(3, 2), LINE_EDGES, x,
                         (np.array([0, 1]), np.array([1.0, 0.0])))
        assert grads.norm() == 0.0

    def test_duplicate_ids_accumulate(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 3))
        model = init_model(3, 2, seed=0)
        ids = np.array([1, 1, 2, 3])
        y = np.array([1.0, 1.0, 0.0, 1.0])
        a = backward(model, LINE_EDGES, x, (ids, y))
        # the same multiset expressed with explicit repetition must agree
        b = backward(model, LINE_EDGES, x,
                     (np.array([2, 1, 3, 1]), np.array([0.0, 1.0, 1.0, 1.0])))
        for ga, gb in zip((a.w1, a.b1, a.w2, a.b2), (b.w1, b.b1, b.w2, b.b2)):
            np.testing.assert_allclose(ga, gb, atol=1e-15)

    def test_label_store_and_tuple_agree(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 3))
        model = init_model(3, 2, seed=0)
        store = LabelStore({0: 1, 2: 0, 3: 1})
        a = backward(model, LINE_EDGES, x, store)
        b = backward(model, LINE_EDGES, x,
                     (np.array([0, 2, 3]), np.array([1.0, 0.0, 1.0])))
        np.testing.assert_allclose(a.w1, b.w1, atol=0)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            backward(init_model(2, 2, 0), LINE_EDGES, np.zeros((4, 2)),
                     (np.zeros(0, dtype=np.int64), np.zeros(0)))


class TestPermutationEquivariance:
    def test_forward_commutes_with_relabeling(self):
        rng = np.random.default_rng(12)
        n = 15
        edges = random_graph_edges(rng, n, 40)
        x = rng.normal(size=(n, 4))
        model = init_model(4, 3, seed=2)
        perm = rng.permutation(n)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        edges_p = inv[edges]  # node v becomes inv[v]
        x_p = x[perm]
        base = forward(model, edges, x)
        permuted = forward(model, edges_p, np.ascontiguousarray(x_p))
        np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


class TestTrain:
    def _toy(self, n=20, seed=13):
        rng = np.random.default_rng(seed)
        y = np.r_[np.ones(n // 2), np.zeros(n // 2)]
        x = (2.0 * y - 1.0)[:, None] + 0.1 * rng.normal(size=(n, 1))
        labels = LabelStore({i: int(y[i]) for i in range(n)})
        edges = np.zeros((0, 2), dtype=np.int64)
        return edges, x, labels

    def test_deterministic_bitwise(self):
        edges, x, labels = self._toy()
        cfg = TrainConfig(epochs=5, batch=8, hidden=4, seed=42)
        a = train(edges, x, labels, cfg)
        b = train(edges, x, labels, cfg)
        for key in ("w1", "b1", "w2", "b2"):
            assert np.array_equal(a.model.params()[key], b.model.params()[key])
        assert a.epoch_losses == b.epoch_losses

    def test_zero_lr_keeps_initial_parameters(self):
        edges, x, labels = self._toy()
        cfg = TrainConfig(lr=0.0, epochs=3, batch=8, hidden=4, seed=5)
        result = train(edges, x, labels, cfg)
        fresh = init_model(1, 4, seed=5)
        for key in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(result.model.params()[key],
                                          fresh.params()[key])

    def test_loss_decreases_on_separable_toy(self):
        edges, x, labels = self._toy()
        cfg = TrainConfig(epochs=12, batch=20, hidden=8, seed=1, balance=None)
        losses = train(edges, x, labels, cfg).epoch_losses
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_single_class_supervision_rejected(self):
        edges, x, _ = self._toy()
        with pytest.raises(DegenerateSupervisionError, match="both classes"):
            train(edges, x, LabelStore({0: 1, 1: 1}), TrainConfig(epochs=1))

    def test_config_validation(self):
        for kwargs in ({"lr": -0.1}, {"epochs": -1}, {"batch": 0},
                       {"hidden": 0}, {"balance": (0, 1)}):
            with pytest.raises(ValueError):
                TrainConfig(**kwargs)

    def test_balanced_sampling_survives_heavy_imbalance(self):
        rng = np.random.default_rng(14)
        n = 60
        y = np.r_[np.ones(3), np.zeros(n - 3)]
        x = (2.0 * y - 1.0)[:, None] + 0.1 * rng.normal(size=(n, 1))
        labels = LabelStore({i: int(y[i]) for i in range(n)})
        cfg = TrainConfig(epochs=25, batch=16, hidden=4, seed=2)
        result = train(np.zeros((0, 2), dtype=np.int64), x, labels, cfg)
        p = forward(result.model, np.zeros((0, 2), dtype=np.int64), x)
        assert p[:3].min() > p[3:].max()  # fraud scored above every benign


class TestRiskScores:
    def test_round_trip_and_validation(self, tmp_path):
        scores = RiskScores(
            z=np.array([0.25, 0.75]),
            provenance=[{"source": "oof", "fold": 1},
                        {"source": "ensemble_mean"}],
        )
        path = tmp_path / "z.json"
        scores.save(path)
        back = RiskScores.load(path)
        np.testing.assert_array_equal(back.z, scores.z)
        assert back.provenance == scores.provenance
        with pytest.raises(ValueError, match="provenance length"):
            RiskScores(z=np.zeros(3), provenance=[{}])


class TestStratifiedFolds:
    def test_round_robin_balance(self):
        labels = LabelStore({i: (1 if i < 10 else 0) for i in range(30)})
        fold_of = stratified_folds(labels, 5, seed=0)
        assert set(fold_of) == set(range(30))
        for fold in range(5):
            members = [v for v, f in fold_of.items() if f == fold]
            assert sum(1 for v in members if v < 10) == 2  # fraud per fold
            assert sum(1 for v in members if v >= 10) == 4

    def test_k_validation(self):
        labels = LabelStore({0: 1, 1: 1, 2: 0, 3: 0, 4: 0})
        with pytest.raises(ValueError, match="K must be >= 2"):
            stratified_folds(labels, 1, seed=0)
        with pytest.raises(ValueError, match="minority"):
            stratified_folds(labels, 3, seed=0)


class TestKFoldOOF:
    def _setup(self, n=40, n_labeled=24, seed=15):
        rng = np.random.default_rng(seed)
        edges = random_graph_edges(rng, n, 80)
        x = rng.normal(size=(n, 3))
        chosen = rng.permutation(n)[:n_labeled]
        labels = LabelStore(
            {int(v): int(i % 2) for i, v in enumerate(chosen)})
        return edges, x, labels

    def test_labeled_scores_come_from_own_fold_model(self):
        edges, x, labels = self._setup()
        cfg = TrainConfig(epochs=2, batch=8, hidden=3, seed=0)
        scores, fold_of, preds = kfold_oof_scores(
            edges, x, labels, 3, cfg, return_details=True)
        violations = 0
        for v in labels.labeled_ids():
            prov = scores.provenance[v]
            assert prov["source"] == "oof"
            if prov["fold"] != fold_of[v]:
                violations += 1
            assert scores.z[v] == preds[fold_of[v], v]
        assert violations == 0

    def test_unlabeled_scores_are_fold_means(self):
        edges, x, labels = self._setup()
        cfg = TrainConfig(epochs=2, batch=8, hidden=3, seed=0)
        scores, _, preds = kfold_oof_scores(
            edges, x, labels, 3, cfg, return_details=True)
        for v in labels.unlabeled_ids(x.shape[0]):
            assert scores.provenance[v] == {"source": "ensemble_mean"}
            assert scores.z[v] == preds[:, v].mean()

    def test_canned_fold_predictions_average(self, monkeypatch):
        # three fold models pinned to constant outputs 0.2 / 0.4 / 0.6
        edges, x, labels = self._setup(n=12, n_labeled=6)
        canned = iter([0.2, 0.4, 0.6])
        order = []

        def fake_train(adj, xx, store, cfg):
            return TrainResult(model=init_model(xx.shape[1], 2, 0),
                               epoch_losses=[])

        def fake_forward(model, adj, xx):
            value = next(canned)
            order.append(value)
            return np.full(xx.shape[0], value)

        monkeypatch.setattr(gnn_module, "train", fake_train)
        monkeypatch.setattr(gnn_module, "forward", fake_forward)
        scores, fold_of, _ = kfold_oof_scores(
            edges, x, labels, 3, TrainConfig(), return_details=True)
        assert order == [0.2, 0.4, 0.6]
        for v in labels.unlabeled_ids(x.shape[0]):
            assert scores.z[v] == pytest.approx(0.4, abs=1e-15)
        fold_value = {0: 0.2, 1: 0.4, 2: 0.6}
        for v in labels.labeled_ids():
            assert scores.z[v] == pytest.approx(fold_value[fold_of[v]])

    def test_deterministic(self):
        edges, x, labels = self._setup()
        cfg = TrainConfig(epochs=2, batch=8, hidden=3, seed=7)
        a = kfold_oof_scores(edges, x, labels, 3, cfg)
        b = kfold_oof_scores(edges, x, labels, 3, cfg)
        assert np.array_equal(a.z, b.z)
