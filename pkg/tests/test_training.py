import numpy as np
import pytest

from dynfuse.config import TrainConfig
from dynfuse.data import SynthSpec, generate_synthetic, split_dataset
from dynfuse.errors import DivergenceError
from dynfuse.model import Recommender
from dynfuse.training import (Adam, adam_step, bpr_loss, sample_batch, train,
                              xavier_init)
from dynfuse.util import substream


def adam_oracle(x0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent scalar Adam, written straight from the update equations."""
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return x


class TestSampleBatch:
    def test_forced_triple(self):
        pairs = np.array([[0, 0]])
        users, pos, neg = sample_batch(np.random.default_rng(0), pairs, [{0}], 2, 8)
        assert np.all(users == 0) and np.all(pos == 0) and np.all(neg == 1)

    def test_deterministic_given_seed(self):
        pairs = np.array([[0, 0], [0, 1], [1, 2], [1, 3]])
        sets = [{0, 1}, {2, 3}]
        seq_a = [sample_batch(substream(9, "sampling"), pairs, sets, 6, 5)
                 for _ in range(1)]
        rng_a, rng_b = substream(9, "sampling"), substream(9, "sampling")
        for _ in range(4):
            batch_a = sample_batch(rng_a, pairs, sets, 6, 5)
            batch_b = sample_batch(rng_b, pairs, sets, 6, 5)
            for arr_a, arr_b in zip(batch_a, batch_b):
                np.testing.assert_array_equal(arr_a, arr_b)

    def test_negative_frequencies_uniform(self):
        # one positive among 4 items leaves 3 candidate negatives
        pairs = np.array([[0, 3]])
        draws = 10_000
        _, _, neg = sample_batch(np.random.default_rng(1), pairs, [{3}], 4, draws)
        counts = np.bincount(neg, minlength=4)
        assert counts[3] == 0
        expected = draws / 3
        sigma = np.sqrt(draws * (1 / 3) * (2 / 3))
        for item in range(3):
            assert abs(counts[item] - expected) < 3 * sigma

    def test_no_candidate_negative_warns_and_resamples(self):
        pairs = np.array([[0, 0], [1, 1]])
        sets = [{0, 1}, {1}]  # user 0 interacted with every item
        with pytest.warns(UserWarning):
            users, pos, neg = sample_batch(np.random.default_rng(2), pairs, sets, 2, 6)
        assert np.all(users == 1)
        assert np.all(neg == 0)


class TestBprLoss:
    def test_equal_scores_give_ln2(self):
        loss = bpr_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]), {}, 0.0)
        assert loss == pytest.approx(2 * np.log(2.0), abs=1e-12)

    def test_large_margin_drives_loss_to_zero(self):
        loss = bpr_loss(np.array([1e3]), np.array([0.0]), {}, 0.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_regularizer_hand_value(self):
        params = {"w": np.array([2.0])}
        loss = bpr_loss(np.array([0.0]), np.array([0.0]), params, 1.0)
        assert loss == pytest.approx(np.log(2.0) + 4.0, abs=1e-12)

    def test_nonfinite_scores_abort(self):
        with pytest.raises(DivergenceError):
            bpr_loss(np.array([np.nan]), np.array([0.0]), {}, 0.0)

    def test_monotone_in_positive_score(self):
        rng = np.random.default_rng(3)
        neg = rng.standard_normal(5)
        pos = rng.standard_normal(5)
        base = bpr_loss(pos, neg, {}, 0.0)
        for bump in (1e-3, 0.1, 2.0):
            assert bpr_loss(pos + bump, neg, {}, 0.0) <= base


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = Adam(params, lr=0.1)
        opt.step({"w": np.zeros(2)})
        opt.step({"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        params = {"w": np.array([0.0])}
        opt = Adam(params, lr=0.05)
        opt.step({"w": np.array([1.0])})
        assert abs(params["w"][0] + 0.05) < 1e-6

    def test_matches_scalar_oracle_on_quadratic(self):
        params = {"x": np.array([1.0])}
        opt = Adam(params, lr=0.1)
        for _ in range(5):
            adam_step(opt, {"x": 2.0 * params["x"]})
        expected = adam_oracle(1.0, lambda x: 2.0 * x, lr=0.1, steps=5)
        assert params["x"][0] == pytest.approx(expected, abs=1e-12)

    def test_nonfinite_gradient_names_parameter(self):
        params = {"bad.param": np.array([1.0])}
        opt = Adam(params)
        with pytest.raises(DivergenceError, match="bad.param"):
            opt.step({"bad.param": np.array([np.inf])})


class TestXavier:
    def test_1x1_bound(self):
        rng = np.random.default_rng(4)
        draws = np.array([xavier_init((1, 1), rng)[0, 0] for _ in range(500)])
        assert np.all(np.abs(draws) <= np.sqrt(3.0))
        assert np.abs(draws).max() > 0.9 * np.sqrt(3.0)

    def test_variance_matches_formula(self):
        rng = np.random.default_rng(5)
        values = np.concatenate([xavier_init((64, 64), rng).ravel() for _ in range(25)])
        assert values.size >= 100_000
        bound = np.sqrt(6.0 / (64 + 64))
        expected_var = bound ** 2 / 3.0  # uniform variance, equals 2/(64+64)
        assert abs(values.var() - expected_var) / expected_var < 0.05

    def test_3d_generator_fan_rule(self):
        rng = np.random.default_rng(6)
        z, p, q = 5, 8, 16
        values = xavier_init((z, p, q), rng)
        bound = np.sqrt(6.0 / (q * z + p))
        assert np.all(np.abs(values) <= bound)
        assert np.abs(values).max() > 0.95 * bound

    def test_reproducible_given_seed(self):
        a = xavier_init((4, 4), substream(1, "init"))
        b = xavier_init((4, 4), substream(1, "init"))
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            xavier_init((0, 3), np.random.default_rng(0))
        with pytest.raises(ValueError):
            xavier_init((2, 2, 2, 2), np.random.default_rng(0))


def tiny_spec(seed=0):
    return SynthSpec(users=20, items=30, clusters=2, latent_dim=4,
                     dims={"visual": 8, "acoustic": 8, "textual": 8},
                     interactions_per_user=8, seed=seed)


def tiny_config(**kwargs):
    defaults = dict(batch_size=64, max_epochs=6, patience=10, out_dim=8,
                    collab_dim=8, meta_dim=3, meta_hidden=8, layers=1,
                    mode="dynamic-full", head="mf", seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestTrain:
    def test_paper_defaults(self):
        config = TrainConfig()
        assert config.lr == 1e-3
        assert config.l2 == 1e-6
        assert config.batch_size == 3000
        assert config.meta_dim == 5
        assert config.patience == 10
        assert config.rep_dim == 64

    def test_zero_lr_stops_after_patience_plus_one(self):
        dataset = generate_synthetic(tiny_spec())
        config = tiny_config(lr=0.0, patience=4, max_epochs=50)
        result = train(config, dataset)
        metrics = [e.val_metric for e in result.history]
        assert len(set(metrics)) == 1
        assert len(result.history) == config.patience + 1

    def test_loss_decreases_on_planted_data(self):
        dataset = generate_synthetic(tiny_spec())
        result = train(tiny_config(lr=0.01, max_epochs=10, patience=10), dataset)
        losses = [e.loss for e in result.history]
        assert all(b < a for a, b in zip(losses[:5], losses[1:5]))
        # beyond the strictly decreasing head, allow small sampling upticks
        assert all(b < a * 1.10 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_determinism_bit_for_bit(self):
        dataset = generate_synthetic(tiny_spec())
        config = tiny_config(max_epochs=4)
        res_a = train(config, dataset)
        res_b = train(config, dataset)
        assert [(e.epoch, e.loss, e.val_metric) for e in res_a.history] == \
               [(e.epoch, e.loss, e.val_metric) for e in res_b.history]
        for name, arr in res_a.model.params().items():
            assert arr.tobytes() == res_b.model.params()[name].tobytes()

    def test_strong_regularizer_shrinks_params(self):
        dataset = generate_synthetic(tiny_spec())
        split = split_dataset(dataset, 0)
        config = tiny_config(l2=1.0)
        model = Recommender.create(config, dataset.n_users, dataset.n_items,
                                   dataset.input_dim, substream(0, "init"))
        features = dataset.feature_matrix()
        pairs = split.train_pairs()
        users, pos, neg = sample_batch(substream(0, "sampling"), pairs,
                                       split.train_sets(), dataset.n_items, 64)
        opt = Adam(model.params(), lr=1e-2)
        norms = []
        for _ in range(12):
            _, grads = model.triple_loss_and_grads(users, pos, neg, features)
            opt.step(grads)
            norms.append(np.sqrt(sum(float((a * a).sum())
                                     for a in model.params().values())))
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_best_checkpoint_matches_best_val(self):
        from dynfuse import evaluation

        dataset = generate_synthetic(tiny_spec())
        split = split_dataset(dataset, 0)
        config = tiny_config(max_epochs=8)
        result = train(config, dataset, split)
        best_seen = max(e.val_metric for e in result.history)
        assert result.best_val == pytest.approx(best_seen)
        report = evaluation.evaluate(result.model, dataset, split,
                                     ks=(config.eval_k,), part="val")
        assert report.metrics["precision"][config.eval_k] == pytest.approx(
            result.best_val, abs=1e-12)

    def test_history_fields(self):
        dataset = generate_synthetic(tiny_spec())
        result = train(tiny_config(max_epochs=3), dataset)
        for epoch, stats in enumerate(result.history, start=1):
            assert stats.epoch == epoch
            assert stats.param_count == result.model.param_count()
            assert stats.seconds >= 0.0

    def test_gcn_head_trains(self):
        dataset = generate_synthetic(tiny_spec())
        config = tiny_config(head="gcn", gcn_layers=2, max_epochs=2)
        result = train(config, dataset)
        assert len(result.history) == 2
        assert any("gcn" in name for name in result.model.params())
