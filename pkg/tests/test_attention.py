import numpy as np
import pytest

from epiens.nn.attention import (
    MultiSourceNet,
    attention_coefficient,
    attention_combine,
    mc_dropout_predict,
    train,
    train_direct_per_horizon,
)
from epiens.nn.core import NeuralError, finite_difference_grad, max_relative_error, mse_loss
from epiens.nn.recurrent import StackedRecurrentNet, TrainConfig
from epiens.panel import CONFIRMED, cut_windows
from epiens.synthetic import generate_panel


def small_net(cell="rnn", m=3, seed=0, dropout=0.0):
    return MultiSourceNet(cell, m, target_index=0, hidden_sizes=(4, 3),
                          attention_size=4, dropout=dropout, seed=seed)


class TestAttentionCoefficient:
    def test_relu_of_bias_with_zero_states(self):
        a = attention_coefficient(np.zeros(3), np.zeros(3), np.ones(3), np.ones(3), 0.5)
        assert a == 0.5

    def test_negative_affine_clamps_to_zero(self):
        a = attention_coefficient(np.ones(2), np.ones(2), -np.ones(2), -np.ones(2), 0.0)
        assert a == 0.0

    def test_hand_dot_products(self):
        a = attention_coefficient(
            np.array([2.0, 9.0]), np.array([7.0, 3.0]),
            np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.0)
        assert a == 5.0

    def test_length_mismatch(self):
        with pytest.raises(NeuralError):
            attention_coefficient(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(3), 0.0)

    def test_non_negative_for_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = attention_coefficient(rng.normal(size=4), rng.normal(size=4),
                                      rng.normal(size=4), rng.normal(size=4),
                                      float(rng.normal()))
            assert a >= 0.0


class TestAttentionCombine:
    def test_all_zero_coefficients_give_tanh_bias(self):
        b_a = np.array([0.3, -0.2])
        out = attention_combine([0.0, 0.0], [np.ones(3), np.ones(3)], np.zeros((2, 3)), b_a)
        assert np.allclose(out, np.tanh(b_a))

    def test_identity_combination(self):
        h = np.array([0.1, -0.5, 0.9])
        out = attention_combine([1.0], [h], np.eye(3), np.zeros(3))
        assert np.allclose(out, np.tanh(h))

    def test_two_branch_hand_evaluation(self):
        h1 = np.array([1.0, 0.0])
        h2 = np.array([0.0, 2.0])
        W_a = np.array([[0.5, 0.25]])
        out = attention_combine([2.0, 3.0], [h1, h2], W_a, np.array([0.1]))
        # sum = 2*h1 + 3*h2 = [2, 6]; W_a @ sum = 1.0 + 1.5 = 2.5; tanh(2.6)
        assert out[0] == pytest.approx(np.tanh(2.6))

    def test_empty_rejected(self):
        with pytest.raises(NeuralError):
            attention_combine([], [], np.eye(2), np.zeros(2))


class TestMultiSourceForward:
    def test_zero_parameters_give_output_bias(self):
        net = small_net()
        for k in net.params:
            net.params[k][...] = 0.0
        net.params["out.b"][...] = 0.7
        pred, _ = net.forward(np.random.default_rng(0).normal(size=(3, 3)))
        assert pred == 0.7

    def test_wrong_column_count_rejected(self):
        net = small_net(m=3)
        with pytest.raises(NeuralError):
            net.forward(np.zeros((3, 2)))

    def test_single_branch_reduces_to_encode_tanh_linear(self):
        net = small_net(m=1, seed=3)
        X = np.random.default_rng(1).normal(size=(3, 1))
        pred, _ = net.forward(X)
        # independent recomputation with the plain stacked machinery
        probe = StackedRecurrentNet("rnn", 1, (4, 3), 1, 0.0, seed=0)
        for i in range(2):
            for part in ("W", "U", "b"):
                probe.params[f"layers.{i}.{part}"] = net.params[f"branch.0.layers.{i}.{part}"]
        _, cache = probe.forward(X[None])
        h = cache[1][0]  # final hidden state of the top layer
        a0 = max(0.0, float(net.params["att.w_r"] @ h + net.params["att.w_b"][0] @ h
                            + net.params["att.b"][0]))
        h_a = np.tanh(net.params["att.W_a"] @ (a0 * h) + net.params["att.b_a"])
        expected = (net.params["out.W"] @ h_a + net.params["out.b"]).item()
        assert pred == pytest.approx(expected, rel=1e-12)

    def test_zeroed_other_branches_leave_target_function(self):
        # silencing every non-target branch encoder makes the model a
        # deterministic function of the target column alone
        net = small_net(m=3, seed=4)
        for j in (1, 2):
            for i in range(2):
                for part in ("W", "U", "b"):
                    net.params[f"branch.{j}.layers.{i}.{part}"][...] = 0.0
        rng = np.random.default_rng(2)
        target_col = rng.normal(size=(3, 1))
        p1, _ = net.forward(np.hstack([target_col, rng.normal(size=(3, 2))]))
        p2, _ = net.forward(np.hstack([target_col, rng.normal(size=(3, 2))]))
        assert p1 == p2

    def test_permuting_non_target_branches_with_parameters_is_symmetric(self):
        net = small_net(m=3, seed=5)
        X = np.random.default_rng(3).normal(size=(3, 3))
        p1, _ = net.forward(X)
        # swap branches 1 and 2 together with their parameters
        for i in range(2):
            for part in ("W", "U", "b"):
                a = net.params[f"branch.1.layers.{i}.{part}"].copy()
                net.params[f"branch.1.layers.{i}.{part}"] = net.params[f"branch.2.layers.{i}.{part}"]
                net.params[f"branch.2.layers.{i}.{part}"] = a
        w = net.params["att.w_b"]
        w[[1, 2]] = w[[2, 1]]
        b = net.params["att.b"]
        b[[1, 2]] = b[[2, 1]]
        Xp = X[:, [0, 2, 1]]
        p2, _ = net.forward(Xp)
        assert p2 == pytest.approx(p1, rel=1e-12)


class TestGradients:
    @pytest.mark.parametrize("cell", ["rnn", "gru", "lstm"])
    def test_full_model_matches_finite_differences(self, cell):
        worst = 0.0
        for draw in range(8):
            rng = np.random.default_rng(500 + draw)
            net = small_net(cell=cell, m=2, seed=draw)
            X = rng.normal(size=(2, 3, 2))
            y = rng.normal(size=2)
            _, grads = net.loss_and_grads(X, y)
            analytic = net.flatten_grads(grads)
            theta0 = net.flat_params()

            def f(theta):
                net.set_flat_params(theta)
                p, _ = net.forward(X)
                return mse_loss(np.atleast_1d(p), y)[0]

            numeric = finite_difference_grad(f, theta0)
            net.set_flat_params(theta0)
            worst = max(worst, max_relative_error(analytic, numeric))
        assert worst < 1e-4


class TestTrainDirectPerHorizon:
    def make_samples(self, panel, horizons):
        feats = ["CF", "DT", "CCGR", "DCGR"]
        return {h: cut_windows(panel, feats, 3, h) for h in horizons}

    def test_single_horizon_gives_one_net(self):
        panel = generate_panel(2, 12, seed=0)
        nets = train_direct_per_horizon(
            lambda h: small_net(m=4, seed=h),
            self.make_samples(panel, [1]),
            TrainConfig(epochs=2, patience=None),
        )
        assert sorted(nets) == [1]

    def test_25_week_panel_horizon_4_has_18_windows(self):
        panel = generate_panel(1, 25, seed=1)
        samples = self.make_samples(panel, [4])
        assert len(samples[4]) == max(0, 25 - 3 - 4 + 1)

    def test_one_net_per_horizon_with_matching_targets(self):
        panel = generate_panel(2, 14, seed=2)
        samples = self.make_samples(panel, [1, 2, 3, 4])
        nets = train_direct_per_horizon(
            lambda h: MultiSourceNet("rnn", 4, hidden_sizes=(4, 3), attention_size=4,
                                     dropout=0.0, seed=h, horizon=h),
            samples,
            TrainConfig(epochs=2, patience=None),
        )
        assert sorted(nets) == [1, 2, 3, 4]
        assert all(nets[h].horizon == h for h in nets)
        for h, batch in samples.items():
            cf = panel.series("R000", CONFIRMED)
            for s in batch:
                if s.region == "R000":
                    assert s.target == cf[s.origin + h]


class TestMcDropout:
    def test_rate_zero_zero_variance(self):
        net = small_net(dropout=0.0, seed=7)
        _, samples = mc_dropout_predict(net, np.zeros((3, 3)), n_samples=20, seed=0)
        assert np.all(samples == samples[0])

    def test_point_is_sample_mean(self):
        net = small_net(dropout=0.2, seed=8)
        point, samples = mc_dropout_predict(net, np.ones((3, 3)), n_samples=30, seed=1)
        assert point == samples.mean()


class TestCheckpoint:
    def test_round_trip(self):
        net = small_net(cell="gru", m=2, seed=9, dropout=0.2)
        X = np.random.default_rng(5).normal(size=(3, 2))
        back = MultiSourceNet.from_dict(net.to_dict())
        assert back.forward(X)[0] == net.forward(X)[0]
