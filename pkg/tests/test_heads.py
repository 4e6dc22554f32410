import numpy as np
import pytest

from dynfuse import heads
from dynfuse.heads import (CollaborativeTable, GcnParams, InteractionGraph,
                           gcn_backward, gcn_forward, gcn_init, gcn_propagate,
                           gcn_score, mf_score)


def oracle_leaky(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def oracle_propagate(pairs, e_users, e_items, w1, w2):
    """Naive per-node loop over explicit neighbor lists."""
    n_users, n_items = e_users.shape[0], e_items.shape[0]
    new_items = np.zeros_like(e_items)
    for i in range(n_items):
        neigh = [u for u, it in pairs if it == i]
        mean = (np.mean([e_users[u] for u in neigh], axis=0)
                if neigh else np.zeros(e_users.shape[1]))
        new_items[i] = oracle_leaky(w1 @ e_items[i] + w2 @ mean)
    new_users = np.zeros_like(e_users)
    for u in range(n_users):
        neigh = [it for uu, it in pairs if uu == u]
        mean = (np.mean([e_items[it] for it in neigh], axis=0)
                if neigh else np.zeros(e_items.shape[1]))
        new_users[u] = oracle_leaky(w1 @ e_users[u] + w2 @ mean)
    return new_users, new_items


class TestMfScore:
    def test_zero_user_embedding(self):
        table = CollaborativeTable(np.zeros((2, 4)), np.zeros((3, 2)))
        assert mf_score(0, np.ones(4), table) == 0.0

    def test_all_ones_dot(self):
        table = CollaborativeTable(np.ones((1, 64)), np.ones((1, 32)))
        assert mf_score(0, np.ones(64), table) == 64.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(30)
        table = CollaborativeTable(rng.standard_normal((3, 6)), rng.standard_normal((2, 3)))
        rep = rng.standard_normal(6)
        expected = sum(table.users[1][d] * rep[d] for d in range(6))
        assert mf_score(1, rep, table) == pytest.approx(expected, abs=1e-15)

    def test_index_out_of_range(self):
        table = CollaborativeTable(np.zeros((2, 4)), np.zeros((2, 2)))
        with pytest.raises(IndexError):
            mf_score(5, np.zeros(4), table)


class TestGcnInit:
    def test_item_vectors_are_64_wide(self):
        rng = np.random.default_rng(31)
        table = CollaborativeTable.create(4, 5, rep_dim=64, collab_dim=32, rng=rng)
        fused = rng.standard_normal((5, 32))
        e_users, e_items = gcn_init(fused, table)
        assert e_items.shape == (5, 64)
        assert e_users.shape == (4, 64)

    def test_zero_multimodal_part(self):
        rng = np.random.default_rng(32)
        table = CollaborativeTable.create(2, 3, rep_dim=8, collab_dim=5, rng=rng)
        _, e_items = gcn_init(np.zeros((3, 3)), table)
        assert np.all(e_items[:, :3] == 0.0)
        np.testing.assert_array_equal(e_items[:, 3:], table.items)

    def test_multimodal_first_layout(self):
        rng = np.random.default_rng(33)
        table = CollaborativeTable.create(2, 3, rep_dim=7, collab_dim=3, rng=rng)
        fused = rng.standard_normal((3, 4))
        _, e_items = gcn_init(fused, table)
        np.testing.assert_array_equal(e_items, np.concatenate([fused, table.items], axis=1))


class TestGraph:
    def test_symmetry_holds_after_construction(self):
        rng = np.random.default_rng(34)
        pairs = np.unique(rng.integers(0, 5, size=(30, 2)), axis=0)
        graph = InteractionGraph(5, 5, pairs)
        assert graph.check_symmetry()
        for i in range(5):
            for u in graph.item_neighbors(i):
                assert i in graph.user_neighbors(u)

    def test_rejects_out_of_range(self):
        with pytest.raises(IndexError):
            InteractionGraph(2, 2, np.array([[0, 5]]))


class TestPropagate:
    def test_identity_self_loop(self):
        rng = np.random.default_rng(35)
        graph = InteractionGraph(3, 4, np.array([[0, 0], [1, 2], [2, 3]]))
        params = GcnParams([{"self": np.eye(5), "neigh": np.zeros((5, 5))}])
        e_u = np.abs(rng.standard_normal((3, 5)))
        e_i = np.abs(rng.standard_normal((4, 5)))
        new_u, new_i = gcn_propagate(graph, e_u, e_i, params, 0)
        np.testing.assert_allclose(new_u, e_u, atol=1e-12)
        np.testing.assert_allclose(new_i, e_i, atol=1e-12)

    def test_single_edge_neighbor_copy(self):
        graph = InteractionGraph(1, 1, np.array([[0, 0]]))
        params = GcnParams([{"self": np.zeros((3, 3)), "neigh": np.eye(3)}])
        e_u = np.array([[1.0, -2.0, 0.5]])
        e_i = np.array([[9.0, 9.0, 9.0]])
        _, new_i = gcn_propagate(graph, e_u, e_i, params, 0)
        np.testing.assert_allclose(new_i[0], oracle_leaky(e_u[0]), atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(36)
        pairs = np.array([[0, 0], [0, 1], [1, 1], [1, 4], [2, 2], [3, 3], [3, 0]])
        graph = InteractionGraph(4, 5, pairs)
        w1, w2 = rng.standard_normal((6, 6)), rng.standard_normal((6, 6))
        params = GcnParams([{"self": w1, "neigh": w2}])
        e_u = rng.standard_normal((4, 6))
        e_i = rng.standard_normal((5, 6))
        new_u, new_i = gcn_propagate(graph, e_u, e_i, params, 0)
        exp_u, exp_i = oracle_propagate(pairs.tolist(), e_u, e_i, w1, w2)
        np.testing.assert_allclose(new_u, exp_u, atol=1e-12)
        np.testing.assert_allclose(new_i, exp_i, atol=1e-12)

    def test_empty_graph_reduces_to_self_transform(self):
        rng = np.random.default_rng(37)
        graph = InteractionGraph(3, 2, np.zeros((0, 2)))
        w1, w2 = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
        params = GcnParams([{"self": w1, "neigh": w2}])
        e_u = rng.standard_normal((3, 4))
        e_i = rng.standard_normal((2, 4))
        new_u, new_i = gcn_propagate(graph, e_u, e_i, params, 0)
        np.testing.assert_allclose(new_u, oracle_leaky(e_u @ w1.T), atol=1e-12)
        np.testing.assert_allclose(new_i, oracle_leaky(e_i @ w1.T), atol=1e-12)

    def test_per_type_weights(self):
        rng = np.random.default_rng(38)
        graph = InteractionGraph(2, 2, np.array([[0, 0], [1, 1]]))
        params = GcnParams.create(1, 3, rng, per_type=True)
        e_u, e_i = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        new_u, new_i = gcn_propagate(graph, e_u, e_i, params, 0)
        w1u, w2u = params.weights_for(0, "user")
        w1i, w2i = params.weights_for(0, "item")
        np.testing.assert_allclose(
            new_i[0], oracle_leaky(w1i @ e_i[0] + w2i @ e_u[0]), atol=1e-12)
        np.testing.assert_allclose(
            new_u[1], oracle_leaky(w1u @ e_u[1] + w2u @ e_i[1]), atol=1e-12)


class TestGcnScore:
    def test_depth_zero_degenerates_to_mf(self):
        rng = np.random.default_rng(39)
        table = CollaborativeTable.create(3, 4, rep_dim=6, collab_dim=2, rng=rng)
        fused = rng.standard_normal((4, 4))
        e_u, e_i = gcn_init(fused, table)
        for u in range(3):
            for i in range(4):
                assert gcn_score(u, i, e_u, e_i) == pytest.approx(
                    mf_score(u, e_i[i], table), abs=1e-14)

    def test_orthogonal_reps_score_zero(self):
        e_u = np.array([[1.0, 0.0]])
        e_i = np.array([[0.0, 1.0]])
        assert gcn_score(0, 0, e_u, e_i) == 0.0

    def test_matches_dot_oracle(self):
        rng = np.random.default_rng(40)
        e_u, e_i = rng.standard_normal((2, 5)), rng.standard_normal((3, 5))
        assert gcn_score(1, 2, e_u, e_i) == pytest.approx(
            float(np.dot(e_u[1], e_i[2])), abs=1e-15)

    def test_ranking_invariant_under_rotation(self):
        rng = np.random.default_rng(41)
        e_u, e_i = rng.standard_normal((4, 8)), rng.standard_normal((6, 8))
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        scores = e_u @ e_i.T
        rotated = (e_u @ q) @ (e_i @ q).T
        np.testing.assert_allclose(rotated, scores, atol=1e-8)


class TestGcnBackward:
    def test_full_pipeline_finite_differences(self):
        # 3 users, 4 items, rep dim 8, one propagation layer, through fusion
        from dynfuse.config import TrainConfig
        from dynfuse.linalg import finite_diff_check
        from dynfuse.model import Recommender

        rng = np.random.default_rng(42)
        config = TrainConfig(l2=1e-3, mode="dynamic-full", layers=1, meta_dim=2,
                             meta_hidden=4, out_dim=4, collab_dim=4, head="gcn",
                             gcn_layers=1)
        model = Recommender.create(config, 3, 4, 6, rng)
        features = rng.standard_normal((4, 6))
        pairs = np.array([[0, 0], [0, 1], [1, 2], [2, 3], [2, 0]])
        graph = InteractionGraph(3, 4, pairs)
        users = np.array([0, 1, 2])
        pos = np.array([0, 2, 3])
        neg = np.array([3, 1, 2])

        def f(flat):
            model.set_flat_params(flat)
            loss, grads = model.triple_loss_and_grads(users, pos, neg, features,
                                                      graph=graph)
            return loss, model.flatten_grads(grads)

        assert finite_diff_check(f, model.flatten_params()) < 1e-4

    def test_backward_shapes_and_accumulation(self):
        rng = np.random.default_rng(43)
        graph = InteractionGraph(3, 4, np.array([[0, 0], [1, 2], [2, 3]]))
        params = GcnParams.create(2, 5, rng)
        e_u0, e_i0 = rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
        u_fin, i_fin, caches = gcn_forward(graph, e_u0, e_i0, params)
        grads, du0, di0 = gcn_backward(graph, params, caches,
                                       np.ones_like(u_fin), np.ones_like(i_fin))
        assert du0.shape == e_u0.shape and di0.shape == e_i0.shape
        assert set(grads) == set(params.named_params())
        assert all(np.linalg.norm(g) > 0 for g in grads.values())
