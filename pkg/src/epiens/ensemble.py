"""Stacking ensemble over individual model predictions.

A small dense network (relu hidden layer, linear output) learns to
combine base-model point forecasts per region and horizon. Training is
leave-one-out over time points: each target week's ensemble prediction
comes from a model trained on every other week, so the held-out target
never leaks into its own prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .nn.core import (
    AdamState,
    EarlyStopper,
    NeuralError,
    adam_step,
    init_dense,
    mse_loss,
)
from .panel import MinMaxScaler

log = logging.getLogger(__name__)


class EnsembleError(ValueError):
    pass


@dataclass
class BasePredictionMatrix:
    """Aligned base-model predictions for one (region, horizon).

    Rows are time points (target week indexes, ascending); columns are
    base methods in a fixed recorded order; ``targets`` holds the truth.
    """

    region: str
    horizon: int
    weeks: list
    methods: list
    values: np.ndarray  # (n_rows, n_methods)
    targets: np.ndarray  # (n_rows,)


def collect_base_predictions(predictions: dict, truths: dict, region: str,
                             horizon: int) -> BasePredictionMatrix:
    """Assemble the stacking input matrix from per-method prediction tables.

    ``predictions`` maps method -> {target_week: point}; ``truths`` maps
    target_week -> observed value. Weeks not covered by every method are
    dropped with a logged warning.
    """
    methods = sorted(predictions)
    if not methods:
        raise EnsembleError("no base methods supplied")
    weeks, rows, targets = [], [], []
    for week in sorted(truths):
        row = []
        for m in methods:
            if week not in predictions[m] or not np.isfinite(predictions[m][week]):
                log.warning("dropping %s h=%d week %s: method %s has no usable prediction",
                            region, horizon, week, m)
                row = None
                break
            row.append(predictions[m][week])
        if row is not None:
            weeks.append(week)
            rows.append(row)
            targets.append(truths[week])
    return BasePredictionMatrix(
        region=region,
        horizon=horizon,
        weeks=weeks,
        methods=methods,
        values=np.array(rows, dtype=np.float64).reshape(len(rows), len(methods)),
        targets=np.array(targets, dtype=np.float64),
    )


@dataclass
class StackingConfig:
    batch_size: int = 8
    epochs: int = 200
    patience: int | None = 50
    learning_rate: float = 0.001
    validation_fraction: float = 0.2
    min_rows_for_validation: int = 5


class StackingModel:
    """relu dense (n_models -> hidden) + linear output, with input/target
    min-max scalers fit on the training fold."""

    def __init__(self, n_models: int, hidden: int = 32, seed: int = 0):
        if n_models < 1:
            raise EnsembleError("need at least one base model column")
        self.n_models = n_models
        self.hidden = hidden
        rng = np.random.default_rng(seed)
        h = init_dense(rng, hidden, n_models)
        o = init_dense(rng, 1, hidden)
        self.params = {"hidden.W": h.weights, "hidden.b": h.bias,
                       "out.W": o.weights, "out.b": o.bias}
        self.input_scalers = [MinMaxScaler() for _ in range(n_models)]
        self.target_scaler = MinMaxScaler()

    def net_forward(self, X):
        """Raw network on already-scaled rows; returns (pred, cache)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None]
        if X.shape[1] != self.n_models:
            raise EnsembleError(f"row width {X.shape[1]} != model width {self.n_models}")
        a1 = np.maximum(X @ self.params["hidden.W"].T + self.params["hidden.b"], 0.0)
        pred = (a1 @ self.params["out.W"].T + self.params["out.b"])[:, 0]
        return pred, (X, a1)

    def net_backward(self, cache, dpred):
        X, a1 = cache
        dpred = np.asarray(dpred, dtype=np.float64).reshape(-1, 1)
        grads = {}
        grads["out.W"] = dpred.T @ a1
        grads["out.b"] = dpred.sum(axis=0)
        da1 = (dpred @ self.params["out.W"]) * (a1 > 0)
        grads["hidden.W"] = da1.T @ X
        grads["hidden.b"] = da1.sum(axis=0)
        return grads

    def flat_params(self):
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        pos = 0
        for k in sorted(self.params):
            n = self.params[k].size
            self.params[k][...] = theta[pos : pos + n].reshape(self.params[k].shape)
            pos += n

    def flatten_grads(self, grads):
        return np.concatenate([grads[k].ravel() for k in sorted(grads)])

    def fit(self, X, y, config: StackingConfig, seed: int = 0):
        """Train on raw rows/targets; scalers are fit here, on this data only."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(X) < 1:
            raise EnsembleError("cannot train a stacking model on no rows")
        self.input_scalers = [MinMaxScaler.fit(X[:, j]) for j in range(self.n_models)]
        self.target_scaler = MinMaxScaler.fit(y)
        Xs = np.column_stack([s.transform(X[:, j]) for j, s in enumerate(self.input_scalers)])
        ys = self.target_scaler.transform(y)

        n = len(Xs)
        use_val = (config.patience is not None and config.validation_fraction > 0
                   and n >= config.min_rows_for_validation)
        if use_val:
            n_val = max(1, int(np.ceil(config.validation_fraction * n)))
            Xt, yt = Xs[:-n_val], ys[:-n_val]
            Xv, yv = Xs[-n_val:], ys[-n_val:]
            stopper = EarlyStopper(patience=config.patience)
        else:
            Xt, yt = Xs, ys

        rng = np.random.default_rng(seed)
        state = AdamState(lr=config.learning_rate)
        trace = []
        for _ in range(config.epochs):
            perm = rng.permutation(len(Xt))
            total = 0.0
            for start in range(0, len(Xt), config.batch_size):
                idx = perm[start : start + config.batch_size]
                pred, cache = self.net_forward(Xt[idx])
                loss, dpred = mse_loss(pred, yt[idx])
                grads = self.net_backward(cache, dpred)
                adam_step(self.params, grads, state)
                total += loss * len(idx)
            trace.append(total / len(Xt))
            if use_val:
                pv, _ = self.net_forward(Xv)
                val_loss, _ = mse_loss(pv, yv)
                if stopper.update(val_loss):
                    break
        return trace

    def predict(self, rows):
        """Ensemble predictions for raw base-forecast rows, clamped at 0."""
        rows = np.asarray(rows, dtype=np.float64)
        single = rows.ndim == 1
        if single:
            rows = rows[None]
        Xs = np.column_stack([s.transform(rows[:, j]) for j, s in enumerate(self.input_scalers)])
        pred, _ = self.net_forward(Xs)
        out = np.maximum(self.target_scaler.inverse(pred), 0.0)
        return float(out[0]) if single else out


def stacking_forward(model: StackingModel, row) -> float:
    """One ensemble prediction from one row of base forecasts."""
    return model.predict(np.asarray(row, dtype=np.float64))


def loo_train_predict(matrix: BasePredictionMatrix, config: StackingConfig | None = None,
                      seed: int = 0):
    """Leave-one-out stacking: train a fresh model per held-out row.

    Returns an array of n ensemble predictions from n independent
    trainings. Fold i never sees row i's features or target, including
    through the scalers, so its prediction is invariant to them.
    """
    config = config or StackingConfig()
    n = len(matrix.targets)
    if n < 2:
        raise EnsembleError("leave-one-out needs at least two rows")
    preds = np.empty(n)
    for i in range(n):
        keep = [j for j in range(n) if j != i]
        model = StackingModel(len(matrix.methods), seed=_fold_seed(seed, i))
        model.fit(matrix.values[keep], matrix.targets[keep], config,
                  seed=_fold_seed(seed, i) + 1)
        preds[i] = model.predict(matrix.values[i])
    return preds


def _fold_seed(seed: int, fold: int) -> int:
    return (seed * 100_003 + fold * 7919) % (2**31)
