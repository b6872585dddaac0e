"""MSE / mixture-density / nearest-neighbor baselines vs oracles."""
import numpy as np
import pytest

from ebreg.baselines import (
    LOG_2PI,
    NeighborIndex,
    mdn_loss,
    mdn_loss_and_grad,
    mdn_sample,
    mdn_split,
    train_mdn,
    train_mse,
)
from ebreg.net import Mlp
from ebreg.training import TrainConfig


class TestTrainMse:
    def test_linear_data_near_zero_error(self):
        # Least-squares oracle: a linear-capacity net must drive the
        # residual of exactly-linear data to ~0.
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (256, 2))
        true_w = np.array([[1.5], [-0.7]])
        y = x @ true_w + 0.3
        model = Mlp([np.zeros((2, 1))], [np.zeros(1)], dropout_rate=0.0)
        cfg = TrainConfig(train_iterations=3000, batch_size=64, learning_rate=0.01)
        train_mse(model, x, y, cfg, np.random.default_rng(1))
        lstsq_res = y - np.column_stack([x, np.ones(256)]) @ np.linalg.lstsq(
            np.column_stack([x, np.ones(256)]), y, rcond=None
        )[0]
        test_mse = float(np.mean((model.forward(x) - y) ** 2))
        assert test_mse < 1e-6 + float(np.mean(lstsq_res**2))

    def test_step_data_interpolates_through_gap(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, (200, 1))
        y = (x >= 0.5).astype(np.float64)
        model = Mlp.create(1, 1, 32, 2, seed=3, dropout_rate=0.1)
        cfg = TrainConfig(train_iterations=1500, batch_size=64, learning_rate=1e-3)
        train_mse(model, x, y, cfg, np.random.default_rng(4))
        grid = np.linspace(0, 1, 1001)[:, None]
        preds = model.forward(grid)[:, 0]
        # Continuous fit must take intermediate values across the jump.
        assert np.any((preds > 0.2) & (preds < 0.8))

    def test_zero_steps_unchanged(self):
        model = Mlp.create(2, 1, 8, 1, seed=0)
        before = [w.copy() for w in model.weights]
        cfg = TrainConfig(train_iterations=0, batch_size=4)
        train_mse(model, np.zeros((4, 2)), np.zeros((4, 1)), cfg, np.random.default_rng(0))
        for w, w0 in zip(model.weights, before):
            assert np.array_equal(w, w0)


class TestMdnLoss:
    def head(self, logits, means, log_stds):
        """Pack mixture parameters into a raw head row."""
        k = len(logits)
        n = len(means[0])
        return np.concatenate(
            [np.asarray(logits, dtype=float),
             np.asarray(means, dtype=float).ravel(),
             np.asarray(log_stds, dtype=float).ravel()]
        )[None, :]

    def test_single_component_at_mode(self):
        # One component, mean == y, std = 1: NLL is (n/2) log(2 pi).
        for n in (1, 3):
            raw = self.head([0.0], [np.zeros(n)], [np.zeros(n)])
            nll = mdn_loss(raw, np.zeros((1, n)), n_components=1)
            assert nll == pytest.approx(0.5 * n * LOG_2PI, abs=1e-12)

    def test_two_identical_components_collapse(self):
        raw1 = self.head([0.7], [[0.3]], [[0.0]])
        raw2 = self.head([0.7, 0.7], [[0.3], [0.3]], [[0.0], [0.0]])
        y = np.array([[0.1]])
        assert mdn_loss(raw2, y, 2) == pytest.approx(mdn_loss(raw1, y, 1), abs=1e-12)

    def test_component_permutation_invariance(self):
        raw_a = self.head([0.2, -0.5], [[0.3], [0.9]], [[-0.1], [0.4]])
        raw_b = self.head([-0.5, 0.2], [[0.9], [0.3]], [[0.4], [-0.1]])
        y = np.array([[0.5]])
        assert mdn_loss(raw_a, y, 2) == pytest.approx(mdn_loss(raw_b, y, 2), abs=1e-12)

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(5)
        k, n = 3, 2
        raw = rng.normal(size=(4, k * (1 + 2 * n)))
        y = rng.normal(size=(4, n))
        loss, d_raw = mdn_loss_and_grad(raw, y, k, train_temperature=1.7)
        h = 1e-6
        flat_idx = [(0, 1), (1, 5), (2, 9), (3, 12), (0, 14)]
        for i, j in flat_idx:
            up = raw.copy(); up[i, j] += h
            down = raw.copy(); down[i, j] -= h
            fd = (mdn_loss(up, y, k, 1.7) - mdn_loss(down, y, k, 1.7)) / (2 * h)
            assert d_raw[i, j] == pytest.approx(fd, rel=1e-3, abs=1e-9)

    def test_split_shape_validation(self):
        with pytest.raises(ValueError):
            mdn_split(np.zeros((1, 7)), n_components=2, y_dim=2)


class TestMdnSample:
    def head(self, logits, means, log_stds):
        return TestMdnLoss.head(self, logits, means, log_stds)

    def test_low_temperature_picks_max_logit(self):
        raw = self.head([2.0, 0.0], [[5.0], [-5.0]], [[-30.0], [-30.0]])
        rng = np.random.default_rng(6)
        for _ in range(50):
            out = mdn_sample(raw, 2, 1, rng, test_temperature=1e-6)
            assert out[0] == pytest.approx(5.0, abs=1e-3)

    def test_large_variance_exponent_collapses_to_mean(self):
        # std < 1 raised to a large power -> ~0.
        raw = self.head([0.0], [[0.25]], [[np.log(0.5)]])
        rng = np.random.default_rng(7)
        out = mdn_sample(raw, 1, 1, rng, variance_exponent=40.0)
        assert out[0] == pytest.approx(0.25, abs=1e-3)

    def test_sample_fractions_match_weights(self):
        raw = self.head([np.log(0.7), np.log(0.3)], [[10.0], [-10.0]], [[-3.0], [-3.0]])
        rng = np.random.default_rng(8)
        draws = np.array([mdn_sample(raw, 2, 1, rng)[0] for _ in range(100_000)])
        frac_first = np.mean(draws > 0)
        assert abs(frac_first - 0.7) < 0.02

    def test_trained_mdn_captures_two_modes(self):
        # Split-circle-like data: two branches at the same input.
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, (400, 1))
        branch = rng.integers(0, 2, size=(400, 1))
        y = np.where(branch == 1, 0.8, 0.2) + 0.01 * rng.standard_normal((400, 1))
        model = Mlp.create(1, 2 * (1 + 2), 32, 2, seed=10, dropout_rate=0.0)
        cfg = TrainConfig(train_iterations=6000, batch_size=64, learning_rate=5e-3)
        train_mdn(model, x, y, 2, cfg, np.random.default_rng(11))
        raw = model.forward(np.full((1, 1), 0.5))
        rng2 = np.random.default_rng(12)
        draws = np.array([mdn_sample(raw, 2, 1, rng2)[0] for _ in range(2000)])
        top = np.mean(draws > 0.5)
        assert 0.3 < top < 0.7  # both modes sampled, roughly balanced
        assert np.mean(np.minimum(np.abs(draws - 0.8), np.abs(draws - 0.2)) < 0.1) > 0.9


class TestNeighborIndex:
    def test_exact_recall_on_stored_points(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(50, 3))
        y = rng.normal(size=(50, 2))
        index = NeighborIndex(x, y)
        assert np.array_equal(index.predict(x), y)

    def test_one_dim_halfway_rule(self):
        index = NeighborIndex([[0.0], [1.0]], [[10.0], [20.0]])
        assert index.predict([[0.4]])[0, 0] == 10.0
        assert index.predict([[0.6]])[0, 0] == 20.0

    def test_tie_breaks_to_lowest_index(self):
        index = NeighborIndex([[0.0], [1.0]], [[10.0], [20.0]])
        assert index.predict([[0.5]])[0, 0] == 10.0

    def test_matches_brute_force_double_loop(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(200, 4))
        y = rng.normal(size=(200, 2))
        queries = rng.normal(size=(1000, 4))
        index = NeighborIndex(x, y)
        fast = index.predict(queries, chunk=64)
        for qi in range(0, 1000, 37):
            dists = [np.linalg.norm(queries[qi] - x[i]) for i in range(200)]
            assert np.array_equal(fast[qi], y[int(np.argmin(dists))])

    def test_empty_index_rejected(self):
        with pytest.raises(ValueError):
            NeighborIndex(np.zeros((0, 2)), np.zeros((0, 1)))
