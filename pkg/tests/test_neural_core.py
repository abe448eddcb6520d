import numpy as np
import pytest

from epiens.nn.core import (
    AdamState,
    DenseParams,
    EarlyStopper,
    NeuralError,
    adam_step,
    dense_forward,
    dropout_mask,
    finite_difference_grad,
    init_dense,
    max_relative_error,
    mse_loss,
)


class TestDense:
    def test_zero_params_tanh_gives_zero(self):
        p = DenseParams(np.zeros((3, 2)), np.zeros(3))
        assert np.all(dense_forward([1.0, -2.0], p, "tanh") == 0.0)

    def test_identity_linear_passes_through(self):
        p = DenseParams(np.eye(2), np.zeros(2))
        x = np.array([0.3, -1.7])
        assert np.allclose(dense_forward(x, p, "linear"), x)

    def test_hand_matrix_arithmetic(self):
        p = DenseParams(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, -1.0]))
        assert dense_forward([1.0, 1.0], p, "linear").tolist() == [4.0, 6.0]

    def test_dimension_mismatch(self):
        p = DenseParams(np.eye(2), np.zeros(2))
        with pytest.raises(NeuralError):
            dense_forward([1.0, 2.0, 3.0], p, "linear")


class TestMseLoss:
    def test_perfect_prediction(self):
        loss, grad = mse_loss([1.0, 2.0], [1.0, 2.0])
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_formula_single(self):
        loss, grad = mse_loss([1.0], [0.0])
        assert loss == 1.0
        assert grad.tolist() == [2.0]

    def test_formula_pair(self):
        loss, _ = mse_loss([1.0, 3.0], [0.0, 1.0])
        assert loss == pytest.approx(2.5)

    def test_empty_rejected(self):
        with pytest.raises(NeuralError):
            mse_loss([], [])


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        adam_step(params, {"w": np.zeros(2)}, state)
        assert params["w"].tolist() == [1.0, -2.0]
        assert state.step == 1

    def test_first_step_magnitude_is_lr_times_sign(self):
        # Closed form: m_hat = g, v_hat = g^2, so the step is lr*sign(g)
        # up to the epsilon in the denominator.
        params = {"w": np.array([0.5, 0.5, 0.5])}
        g = np.array([3.0, -0.04, 1e-3])
        state = AdamState()
        adam_step(params, {"w": g.copy()}, state)
        delta = params["w"] - 0.5
        assert np.allclose(delta, -state.lr * np.sign(g), atol=1e-5)

    def test_steps_on_quadratic_reduce_loss(self):
        # loss(w) = w^2, gradient 2w; the first Adam steps must descend
        params = {"w": np.array([1.0])}
        state = AdamState()
        losses = []
        for _ in range(3):
            losses.append(params["w"][0] ** 2)
            adam_step(params, {"w": 2 * params["w"]}, state)
        assert losses[0] > losses[1] > losses[2]

    def test_non_finite_gradient_rejected(self):
        params = {"w": np.zeros(1)}
        with pytest.raises(NeuralError):
            adam_step(params, {"w": np.array([np.nan])}, AdamState())


class TestFiniteDifferences:
    def test_quadratic_derivative(self):
        g = finite_difference_grad(lambda th: float(th[0] ** 2), np.array([3.0]))
        assert g[0] == pytest.approx(6.0, abs=1e-6)

    def test_constant_function(self):
        g = finite_difference_grad(lambda th: 7.0, np.array([1.0, 2.0]))
        assert np.all(g == 0.0)

    def test_dense_layer_gradient_matches_analytic(self):
        rng = np.random.default_rng(5)
        p = init_dense(rng, 3, 4)
        x = rng.normal(size=4)
        target = rng.normal(size=3)
        shapes = [p.weights.shape, p.bias.shape]

        def unpack(theta):
            w = theta[:12].reshape(3, 4)
            b = theta[12:]
            return DenseParams(w, b)

        def loss(theta):
            out = dense_forward(x, unpack(theta), "tanh")
            return mse_loss(out, target)[0]

        theta0 = np.concatenate([p.weights.ravel(), p.bias.ravel()])
        # analytic gradient through tanh
        out = dense_forward(x, p, "tanh")
        dout = 2.0 * (out - target) / out.size
        da = dout * (1 - out**2)
        analytic = np.concatenate([np.outer(da, x).ravel(), da])
        numeric = finite_difference_grad(loss, theta0)
        assert max_relative_error(analytic, numeric) < 1e-4


class TestEarlyStopper:
    def test_stops_at_exactly_patience_plus_one(self):
        stopper = EarlyStopper(patience=3)
        assert stopper.update(1.0) is False  # improvement
        decisions = [stopper.update(2.0) for _ in range(4)]
        assert decisions == [False, False, False, True]

    def test_never_stops_early_with_improvements(self):
        stopper = EarlyStopper(patience=2)
        losses = [5.0, 4.0, 4.5, 3.9, 4.2, 4.1]
        assert all(not stopper.update(v) for v in losses)

    @pytest.mark.parametrize("patience", [0, 1, 5])
    def test_exact_stop_property(self, patience):
        stopper = EarlyStopper(patience=patience)
        stopper.update(1.0)
        for i in range(patience):
            assert stopper.update(1.0 + i) is False
        assert stopper.update(99.0) is True


class TestDropout:
    def test_rate_zero_is_identity(self):
        mask = dropout_mask(np.random.default_rng(0), (4, 5), 0.0)
        assert np.all(mask == 1.0)

    def test_inverted_scaling(self):
        rng = np.random.default_rng(1)
        mask = dropout_mask(rng, 10_000, 0.2)
        assert set(np.unique(mask)).issubset({0.0, 1.25})
        assert mask.mean() == pytest.approx(1.0, abs=0.02)

    def test_bad_rate(self):
        with pytest.raises(NeuralError):
            dropout_mask(np.random.default_rng(0), 3, 1.0)
