"""Stacked RNN/GRU/LSTM forecasters trained by backpropagation through time.

A network is a k-stack of recurrent layers, a small dense layer, one
dropout layer, and a linear output head. Training uses Adam on MSE with
seeded shuffling and chronological early stopping; uncertainty comes
from Monte Carlo dropout at inference. Hot per-timestep loops run on the
kernel backend (compiled when available).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (
    AdamState,
    DenseParams,
    EarlyStopper,
    NeuralError,
    adam_step,
    dense_forward,
    dropout_mask,
    init_dense,
    mse_loss,
    sigmoid,
)

CELL_KINDS = ("rnn", "gru", "lstm")
_N_GATES = {"rnn": 1, "gru": 3, "lstm": 4}


# ---------------------------------------------------------------------------
# Single-cell reference operations (also the oracle for the batched kernels)
# ---------------------------------------------------------------------------

@dataclass
class RnnCellParams:
    W: np.ndarray  # (H, in)
    U: np.ndarray  # (H, H)
    b: np.ndarray  # (H,)


def rnn_cell_forward(x, h_prev, p: RnnCellParams):
    """h_t = tanh(W x + U h_prev + b)."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[0] != p.W.shape[1] or h_prev.shape[0] != p.U.shape[1]:
        raise NeuralError("cell input shapes inconsistent with parameters")
    return np.tanh(p.W @ x + p.U @ h_prev + p.b)


@dataclass
class GateParams:
    """Stacked gate parameters: W (n_gates, H, in), U (n_gates, H, H), b (n_gates, H)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray


def gru_cell_forward(x, h_prev, p: GateParams):
    """Gated update: z and r sigmoids, tanh candidate, h = (1-z) h_prev + z n.

    A saturated update gate hands the state entirely to the candidate path.
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[0] != p.W.shape[2] or h_prev.shape[0] != p.U.shape[2]:
        raise NeuralError("cell input shapes inconsistent with parameters")
    z = sigmoid(p.W[0] @ x + p.U[0] @ h_prev + p.b[0])
    r = sigmoid(p.W[1] @ x + p.U[1] @ h_prev + p.b[1])
    n = np.tanh(p.W[2] @ x + p.U[2] @ (r * h_prev) + p.b[2])
    return (1.0 - z) * h_prev + z * n


def lstm_cell_forward(x, state, p: GateParams):
    """Standard four-gate LSTM step; returns (h_t, c_t)."""
    h_prev, c_prev = state
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != p.W.shape[2] or np.asarray(h_prev).shape[0] != p.U.shape[2]:
        raise NeuralError("cell input shapes inconsistent with parameters")
    i = sigmoid(p.W[0] @ x + p.U[0] @ h_prev + p.b[0])
    f = sigmoid(p.W[1] @ x + p.U[1] @ h_prev + p.b[1])
    g = np.tanh(p.W[2] @ x + p.U[2] @ h_prev + p.b[2])
    o = sigmoid(p.W[3] @ x + p.U[3] @ h_prev + p.b[3])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


# ---------------------------------------------------------------------------
# Layer stacks (shared with the multi-branch attention model)
# ---------------------------------------------------------------------------

def stack_forward(cell: str, layers, X):
    """Run X (B, T, in) through a list of (W, U, b) recurrent layers.

    Returns (top hidden sequence, per-layer kernel caches).
    """
    caches = []
    A = X
    for W, U, b in layers:
        if cell == "rnn":
            Hs = kernels.rnn_forward(A, W, U, b)
            caches.append((A, Hs))
        elif cell == "gru":
            Hs, Z, R, N = kernels.gru_forward(A, W, U, b)
            caches.append((A, Hs, Z, R, N))
        else:
            Hs, Cs, Ig, F, G, O = kernels.lstm_forward(A, W, U, b)
            caches.append((A, Hs, Cs, Ig, F, G, O))
        A = Hs
    return A, caches


def stack_backward(cell: str, layers, caches, dH):
    """BPTT through a layer stack; returns per-layer (dW, dU, db) and dX."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, U, b = layers[i]
        if cell == "rnn":
            A, Hs = caches[i]
            dX, dW, dU, db = kernels.rnn_backward(A, W, U, Hs, dH)
        elif cell == "gru":
            A, Hs, Z, R, N = caches[i]
            dX, dW, dU, db = kernels.gru_backward(A, W, U, Hs, Z, R, N, dH)
        else:
            A, Hs, Cs, Ig, F, G, O = caches[i]
            dX, dW, dU, db = kernels.lstm_backward(A, W, U, Hs, Cs, Ig, F, G, O, dH)
        grads[i] = (dW, dU, db)
        dH = dX
    return grads, dH


def init_recurrent_layer(rng, cell: str, n_in: int, n_hidden: int):
    """Seeded uniform +-1/sqrt(fan_in) gate parameters for one layer."""
    g = _N_GATES[cell]
    bound = 1.0 / np.sqrt(n_in)
    rbound = 1.0 / np.sqrt(n_hidden)
    shape_w = (n_hidden, n_in) if cell == "rnn" else (g, n_hidden, n_in)
    shape_u = (n_hidden, n_hidden) if cell == "rnn" else (g, n_hidden, n_hidden)
    shape_b = (n_hidden,) if cell == "rnn" else (g, n_hidden)
    W = rng.uniform(-bound, bound, size=shape_w)
    U = rng.uniform(-rbound, rbound, size=shape_u)
    b = rng.uniform(-rbound, rbound, size=shape_b)
    if cell == "lstm":
        b[1] = 1.0  # forget gate opens wide at init
    return W, U, b


# ---------------------------------------------------------------------------
# Stacked network
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 500
    patience: int | None = 50
    learning_rate: float = 0.001
    validation_fraction: float = 0.2


class StackedRecurrentNet:
    """k recurrent layers -> dense(relu) -> dropout -> linear output."""

    def __init__(self, cell: str, input_size: int, hidden_sizes=(32, 32),
                 dense_size: int = 16, dropout: float = 0.2, seed: int = 0):
        if cell not in CELL_KINDS:
            raise NeuralError(f"cell must be one of {CELL_KINDS}, got {cell!r}")
        if not 0.0 <= dropout < 1.0:
            raise NeuralError("dropout rate must be in [0, 1)")
        self.cell = cell
        self.input_size = input_size
        self.hidden_sizes = tuple(hidden_sizes)
        self.dense_size = dense_size
        self.dropout = dropout
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        fan_in = input_size
        for i, h in enumerate(self.hidden_sizes):
            W, U, b = init_recurrent_layer(rng, cell, fan_in, h)
            self.params[f"layers.{i}.W"] = W
            self.params[f"layers.{i}.U"] = U
            self.params[f"layers.{i}.b"] = b
            fan_in = h
        head = init_dense(rng, dense_size, fan_in)
        out = init_dense(rng, 1, dense_size)
        self.params["head.W"], self.params["head.b"] = head.weights, head.bias
        self.params["out.W"], self.params["out.b"] = out.weights, out.bias

    # -- plumbing ----------------------------------------------------------

    def layer_params(self, i: int):
        return (self.params[f"layers.{i}.W"], self.params[f"layers.{i}.U"],
                self.params[f"layers.{i}.b"])

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        pos = 0
        for k in sorted(self.params):
            n = self.params[k].size
            self.params[k][...] = theta[pos : pos + n].reshape(self.params[k].shape)
            pos += n
        if pos != theta.size:
            raise NeuralError("flat parameter vector has wrong length")

    @staticmethod
    def flatten_grads(grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in sorted(grads)])

    # -- forward / backward --------------------------------------------------

    def forward(self, X, mask=None):
        """Batched prediction. X is (B, T, S) or a single (T, S) window.

        ``mask`` is an optional dropout mask over the dense activations;
        omitting it gives the deterministic forward pass.
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.input_size:
            raise NeuralError(f"window shape {X.shape} incompatible with input size {self.input_size}")
        if X.shape[1] == 0:
            raise NeuralError("empty time window")
        layers = [self.layer_params(i) for i in range(len(self.hidden_sizes))]
        A, caches = stack_forward(self.cell, layers, X)
        h_last = A[:, -1]
        d1 = np.maximum(h_last @ self.params["head.W"].T + self.params["head.b"], 0.0)
        dd = d1 if mask is None else d1 * mask
        pred = (dd @ self.params["out.W"].T + self.params["out.b"])[:, 0]
        cache = (caches, h_last, d1, dd, mask)
        if single:
            return float(pred[0]), cache
        return pred, cache

    def backward(self, cache, dpred):
        """Gradients of sum(dpred * pred) w.r.t. every parameter."""
        caches, h_last, d1, dd, mask = cache
        dpred = np.asarray(dpred, dtype=np.float64).reshape(-1, 1)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["out.W"] += dpred.T @ dd
        grads["out.b"] += dpred.sum(axis=0)
        d_dd = dpred @ self.params["out.W"]
        d_d1 = d_dd if mask is None else d_dd * mask
        da1 = d_d1 * (d1 > 0)
        grads["head.W"] += da1.T @ h_last
        grads["head.b"] += da1.sum(axis=0)
        dh_last = da1 @ self.params["head.W"]

        B = h_last.shape[0]
        dH = np.zeros((B,) + caches[-1][1].shape[1:])
        dH[:, -1] = dh_last
        layers = [self.layer_params(i) for i in range(len(self.hidden_sizes))]
        layer_grads, _ = stack_backward(self.cell, layers, caches, dH)
        for i, (dW, dU, db) in enumerate(layer_grads):
            grads[f"layers.{i}.W"] += dW
            grads[f"layers.{i}.U"] += dU
            grads[f"layers.{i}.b"] += db
        return grads

    def loss_and_grads(self, X, y, mask=None):
        """Mean batch MSE and its parameter gradients."""
        pred, cache = self.forward(X, mask=mask)
        pred = np.atleast_1d(pred)
        if not np.all(np.isfinite(pred)):
            raise NeuralError("non-finite forward values")
        loss, dpred = mse_loss(pred, y)
        return loss, self.backward(cache, dpred)

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "format": "epiens-recurrent-net",
            "version": 1,
            "cell": self.cell,
            "input_size": self.input_size,
            "hidden_sizes": list(self.hidden_sizes),
            "dense_size": self.dense_size,
            "dropout": self.dropout,
            "seed": self.seed,
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "epiens-recurrent-net" or doc.get("version") != 1:
            raise NeuralError("unrecognized checkpoint format")
        net = cls(doc["cell"], doc["input_size"], tuple(doc["hidden_sizes"]),
                  doc["dense_size"], doc["dropout"], doc.get("seed", 0))
        for k, spec in doc["params"].items():
            net.params[k] = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        return net


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _split_chronological(samples, fraction):
    order = sorted(range(len(samples)), key=lambda i: (samples[i].origin, samples[i].region))
    n_val = int(np.ceil(fraction * len(samples))) if fraction > 0 else 0
    if n_val == 0 or n_val >= len(samples):
        return order, []
    return order[:-n_val], order[-n_val:]


def train(net: StackedRecurrentNet, samples, config: TrainConfig, seed: int = 0):
    """Adam-optimize a network on window samples; returns the loss trace.

    Splits off the most recent windows for early-stopping validation,
    shuffles deterministically from ``seed``, and mutates ``net`` in
    place. Dropout is active during training and the validation loss is
    computed deterministically.
    """
    if not samples:
        raise NeuralError("cannot train on an empty sample list")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = _split_chronological(samples, config.validation_fraction)
    use_early = config.patience is not None and len(val_idx) > 0

    X = np.stack([samples[i].input for i in train_idx]).astype(np.float64)
    y = np.array([samples[i].target for i in train_idx])
    if use_early:
        Xv = np.stack([samples[i].input for i in val_idx]).astype(np.float64)
        yv = np.array([samples[i].target for i in val_idx])
        stopper = EarlyStopper(patience=config.patience)

    state = AdamState(lr=config.learning_rate)
    trace = []
    n = len(train_idx)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            mask = None
            if net.dropout > 0:
                mask = dropout_mask(rng, (len(idx), net.dense_size), net.dropout)
            loss, grads = net.loss_and_grads(X[idx], y[idx], mask=mask)
            adam_step(net.params, grads, state)
            total += loss * len(idx)
        trace.append(total / n)
        if use_early:
            pv, _ = net.forward(Xv)
            val_loss, _ = mse_loss(np.atleast_1d(pv), yv)
            if stopper.update(val_loss):
                break
    return trace


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def mc_dropout_predict(net: StackedRecurrentNet, X, n_samples: int = 50, seed: int = 0):
    """Monte Carlo dropout samples for one window; returns (point, samples).

    The point forecast is exactly the sample mean. Rate 0 yields n
    identical samples equal to the deterministic forward pass.
    """
    if n_samples < 1:
        raise NeuralError("need at least one Monte Carlo sample")
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(n_samples)
    for s in range(n_samples):
        mask = dropout_mask(rng, (1, net.dense_size), net.dropout)
        pred, _ = net.forward(X[None], mask=mask)
        out[s] = pred[0]
    return float(out.mean()), out


def recursive_forecast(net: StackedRecurrentNet, window, horizons=(1, 2, 3, 4)):
    """Multi-step forecasts by feeding each prediction back into the window.

    Only defined for single-feature models; multi-feature models train a
    separate network per horizon instead.
    """
    if net.input_size != 1:
        raise NeuralError("recursive forecasting requires a single-feature model")
    window = np.asarray(window, dtype=np.float64).reshape(-1, 1)
    preds = {}
    for h in range(1, max(horizons) + 1):
        value, _ = net.forward(window)
        preds[h] = value
        window = np.vstack([window[1:], [[value]]])
    return [preds[h] for h in horizons]


def recursive_mc_forecast(net: StackedRecurrentNet, window, horizons=(1, 2, 3, 4),
                          n_samples: int = 50, seed: int = 0):
    """MC-dropout version of recursive forecasting.

    Each sample runs its own prediction chain with fresh masks per step;
    points are per-horizon sample means. Returns (points, samples) with
    samples shaped (n_samples, len(horizons)).
    """
    if net.input_size != 1:
        raise NeuralError("recursive forecasting requires a single-feature model")
    rng = np.random.default_rng(seed)
    hmax = max(horizons)
    base = np.asarray(window, dtype=np.float64).reshape(-1, 1)
    samples = np.empty((n_samples, hmax))
    for s in range(n_samples):
        w = base.copy()
        for h in range(1, hmax + 1):
            mask = dropout_mask(rng, (1, net.dense_size), net.dropout)
            pred, _ = net.forward(w[None], mask=mask)
            samples[s, h - 1] = pred[0]
            w = np.vstack([w[1:], [[pred[0]]]])
    cols = [h - 1 for h in horizons]
    return samples[:, cols].mean(axis=0), samples[:, cols]
