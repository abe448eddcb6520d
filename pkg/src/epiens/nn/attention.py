"""Multi-source attention networks: one recurrent branch per feature.

Each of the m features gets its own k-stacked recurrent encoder; scalar
relu attention coefficients measure each feature's effect on the target
(confirmed-cases) branch, a tanh layer combines the weighted branch
states, and a linear head emits the forecast. All branch hidden sizes
must match because the combining weights are shared across branches.

Multi-feature models forecast each horizon with a separately trained
network (the direct strategy) rather than recursively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    AdamState,
    EarlyStopper,
    NeuralError,
    adam_step,
    dropout_mask,
    mse_loss,
)
from .recurrent import (
    CELL_KINDS,
    TrainConfig,
    init_recurrent_layer,
    stack_backward,
    stack_forward,
)


def attention_coefficient(h_r, h_j, w_r, w_j, b_j: float) -> float:
    """relu(w_r . h_r + w_j . h_j + b_j): feature j's effect on the target."""
    h_r = np.asarray(h_r, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    if h_r.shape != h_j.shape:
        raise NeuralError("branch hidden states must have equal length")
    return float(max(0.0, w_r @ h_r + w_j @ h_j + b_j))


def attention_combine(coefficients, hiddens, W_a, b_a):
    """tanh(W_a sum_j a_j h_j + b_a), the combined attention state."""
    if len(coefficients) == 0 or len(coefficients) != len(hiddens):
        raise NeuralError("need one coefficient per hidden state")
    s = sum(a * np.asarray(h, dtype=np.float64) for a, h in zip(coefficients, hiddens))
    return np.tanh(W_a @ s + b_a)


class MultiSourceNet:
    """m recurrent branches + scalar attention + tanh combine + linear out."""

    def __init__(self, cell: str, n_features: int, target_index: int = 0,
                 hidden_sizes=(32, 32), attention_size: int = 16,
                 dropout: float = 0.2, seed: int = 0, horizon: int = 1):
        if cell not in CELL_KINDS:
            raise NeuralError(f"cell must be one of {CELL_KINDS}, got {cell!r}")
        if n_features < 1:
            raise NeuralError("need at least one feature branch")
        if not 0 <= target_index < n_features:
            raise NeuralError("target feature index out of range")
        self.cell = cell
        self.n_features = n_features
        self.target_index = target_index
        self.hidden_sizes = tuple(hidden_sizes)
        self.attention_size = attention_size
        self.dropout = dropout
        self.seed = seed
        self.horizon = horizon
        H = self.hidden_sizes[-1]
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for j in range(n_features):
            fan_in = 1
            for i, h in enumerate(self.hidden_sizes):
                W, U, b = init_recurrent_layer(rng, cell, fan_in, h)
                self.params[f"branch.{j}.layers.{i}.W"] = W
                self.params[f"branch.{j}.layers.{i}.U"] = U
                self.params[f"branch.{j}.layers.{i}.b"] = b
                fan_in = h
        bound = 1.0 / np.sqrt(H)
        self.params["att.w_r"] = rng.uniform(-bound, bound, size=H)
        self.params["att.w_b"] = rng.uniform(-bound, bound, size=(n_features, H))
        self.params["att.b"] = rng.uniform(-bound, bound, size=n_features)
        self.params["att.W_a"] = rng.uniform(-bound, bound, size=(attention_size, H))
        self.params["att.b_a"] = rng.uniform(-bound, bound, size=attention_size)
        obound = 1.0 / np.sqrt(attention_size)
        self.params["out.W"] = rng.uniform(-obound, obound, size=(1, attention_size))
        self.params["out.b"] = rng.uniform(-obound, obound, size=1)

    # -- plumbing ------------------------------------------------------------

    def _branch_layers(self, j: int):
        return [
            (
                self.params[f"branch.{j}.layers.{i}.W"],
                self.params[f"branch.{j}.layers.{i}.U"],
                self.params[f"branch.{j}.layers.{i}.b"],
            )
            for i in range(len(self.hidden_sizes))
        ]

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

    # -- forward / backward ----------------------------------------------------

    def forward(self, X, mask=None):
        """Predict from a (B, T, m) or single (T, m) multi-feature window."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.shape[2] != self.n_features:
            raise NeuralError(
                f"window has {X.shape[2]} feature columns, model expects {self.n_features}"
            )
        B = X.shape[0]
        hiddens, caches = [], []
        for j in range(self.n_features):
            A, cache = stack_forward(self.cell, self._branch_layers(j),
                                     np.ascontiguousarray(X[:, :, j : j + 1]))
            hiddens.append(A[:, -1])
            caches.append(cache)
        h_r = hiddens[self.target_index]
        w_r, w_b, b = self.params["att.w_r"], self.params["att.w_b"], self.params["att.b"]
        coeff = np.empty((B, self.n_features))
        for j in range(self.n_features):
            coeff[:, j] = np.maximum(h_r @ w_r + hiddens[j] @ w_b[j] + b[j], 0.0)
        s = np.zeros_like(h_r)
        for j in range(self.n_features):
            s += coeff[:, j : j + 1] * hiddens[j]
        h_a = np.tanh(s @ self.params["att.W_a"].T + self.params["att.b_a"])
        dd = h_a if mask is None else h_a * mask
        pred = (dd @ self.params["out.W"].T + self.params["out.b"])[:, 0]
        cache = (X, hiddens, caches, coeff, s, h_a, dd, mask)
        if single:
            return float(pred[0]), cache
        return pred, cache

    def backward(self, cache, dpred):
        X, hiddens, caches, coeff, s, h_a, dd, mask = cache
        dpred = np.asarray(dpred, dtype=np.float64).reshape(-1, 1)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["out.W"] += dpred.T @ dd
        grads["out.b"] += dpred.sum(axis=0)
        d_dd = dpred @ self.params["out.W"]
        d_ha = d_dd if mask is None else d_dd * mask
        da_pre = d_ha * (1.0 - h_a * h_a)
        grads["att.W_a"] += da_pre.T @ s
        grads["att.b_a"] += da_pre.sum(axis=0)
        ds = da_pre @ self.params["att.W_a"]

        w_r, w_b = self.params["att.w_r"], self.params["att.w_b"]
        h_r = hiddens[self.target_index]
        d_hidden = [ds * coeff[:, j : j + 1] for j in range(self.n_features)]
        d_hr_extra = np.zeros_like(h_r)
        for j in range(self.n_features):
            da = (ds * hiddens[j]).sum(axis=1)  # d loss / d a_j
            dc = da * (coeff[:, j] > 0)  # through the relu
            grads["att.w_r"] += dc @ h_r
            grads["att.w_b"][j] += dc @ hiddens[j]
            grads["att.b"][j] += dc.sum()
            d_hr_extra += dc[:, None] * w_r
            d_hidden[j] += dc[:, None] * w_b[j]
        d_hidden[self.target_index] += d_hr_extra

        for j in range(self.n_features):
            dH = np.zeros(caches[j][-1][1].shape)
            dH[:, -1] = d_hidden[j]
            layer_grads, _ = stack_backward(self.cell, self._branch_layers(j), caches[j], dH)
            for i, (dW, dU, db) in enumerate(layer_grads):
                grads[f"branch.{j}.layers.{i}.W"] += dW
                grads[f"branch.{j}.layers.{i}.U"] += dU
                grads[f"branch.{j}.layers.{i}.b"] += db
        return grads

    def loss_and_grads(self, X, y, mask=None):
        pred, cache = self.forward(X, mask=mask)
        pred = np.atleast_1d(pred)
        if not np.all(np.isfinite(pred)):
            raise NeuralError("non-finite forward values")
        loss, dpred = mse_loss(pred, y)
        return loss, self.backward(cache, dpred)

    # -- serialization ---------------------------------------------------------

    def to_dict(self):
        return {
            "format": "epiens-attention-net",
            "version": 1,
            "cell": self.cell,
            "n_features": self.n_features,
            "target_index": self.target_index,
            "hidden_sizes": list(self.hidden_sizes),
            "attention_size": self.attention_size,
            "dropout": self.dropout,
            "seed": self.seed,
            "horizon": self.horizon,
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "epiens-attention-net" or doc.get("version") != 1:
            raise NeuralError("unrecognized checkpoint format")
        net = cls(doc["cell"], doc["n_features"], doc["target_index"],
                  tuple(doc["hidden_sizes"]), doc["attention_size"],
                  doc["dropout"], doc.get("seed", 0), doc.get("horizon", 1))
        for k, spec in doc["params"].items():
            net.params[k] = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        return net


def mc_dropout_predict(net: MultiSourceNet, X, n_samples: int = 50, seed: int = 0):
    """MC-dropout samples through the attention head; (point, samples)."""
    if n_samples < 1:
        raise NeuralError("need at least one Monte Carlo sample")
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(n_samples)
    for s in range(n_samples):
        mask = dropout_mask(rng, (1, net.attention_size), net.dropout)
        pred, _ = net.forward(X[None], mask=mask)
        out[s] = pred[0]
    return float(out.mean()), out


def train(net: MultiSourceNet, samples, config: TrainConfig, seed: int = 0):
    """Adam training loop over multi-feature window samples.

    Identical protocol to the single-feature trainer: seeded shuffling,
    chronological validation split, dropout active during training.
    """
    if not samples:
        raise NeuralError("cannot train on an empty sample list")
    rng = np.random.default_rng(seed)
    order = sorted(range(len(samples)), key=lambda i: (samples[i].origin, samples[i].region))
    n_val = int(np.ceil(config.validation_fraction * len(samples))) if config.validation_fraction > 0 else 0
    if n_val == 0 or n_val >= len(samples):
        train_idx, val_idx = order, []
    else:
        train_idx, val_idx = order[:-n_val], order[-n_val:]
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
                mask = dropout_mask(rng, (len(idx), net.attention_size), net.dropout)
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


def train_direct_per_horizon(make_net, samples_by_horizon: dict, config: TrainConfig,
                             seed: int = 0):
    """Train one independent network per forecast horizon.

    ``make_net(horizon)`` builds a fresh model; ``samples_by_horizon``
    maps each horizon to its own training windows (targets h weeks out).
    Returns {horizon: trained net}.
    """
    from . import recurrent

    nets = {}
    for h in sorted(samples_by_horizon):
        samples = samples_by_horizon[h]
        if not samples:
            raise NeuralError(f"no training windows for horizon {h}")
        net = make_net(h)
        trainer = train if isinstance(net, MultiSourceNet) else recurrent.train
        trainer(net, samples, config, seed=seed + h)
        nets[h] = net
    return nets
