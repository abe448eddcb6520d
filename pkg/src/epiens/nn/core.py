"""Minimal dense-layer machinery shared by every network in the toolkit.

Activations, the MSE training loss, parameter initialization, the Adam
optimizer, inverted dropout masks, early stopping, and a central
finite-difference gradient oracle. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NeuralError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "relu": (lambda x: np.maximum(x, 0.0), lambda y: (y > 0).astype(np.float64)),
    "linear": (lambda x: x, lambda y: np.ones_like(y)),
}


def activation(kind: str):
    """(forward, derivative-from-output) pair for an activation name."""
    try:
        return _ACTIVATIONS[kind]
    except KeyError:
        raise NeuralError(f"unknown activation {kind!r}; have {sorted(_ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# Dense layers
# ---------------------------------------------------------------------------

@dataclass
class DenseParams:
    """Weights (out x in) and bias (out) of a fully connected layer."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise NeuralError(
                f"inconsistent dense shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NeuralError("non-finite dense parameters")


def init_dense(rng: np.random.Generator, n_out: int, n_in: int) -> DenseParams:
    """Uniform +-1/sqrt(fan_in) initialization."""
    bound = 1.0 / np.sqrt(n_in)
    return DenseParams(
        weights=rng.uniform(-bound, bound, size=(n_out, n_in)),
        bias=rng.uniform(-bound, bound, size=n_out),
    )


def dense_forward(x, params: DenseParams, act: str = "linear"):
    """act(W x + b). Accepts a single vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    n_in = params.weights.shape[1]
    if x.shape[-1] != n_in:
        raise NeuralError(f"input width {x.shape[-1]} != layer fan-in {n_in}")
    fwd, _ = activation(act)
    return fwd(x @ params.weights.T + params.bias)


def dense_backward(x, out, d_out, params: DenseParams, act: str):
    """Gradients of a dense layer given its input, output, and output grad.

    Returns (d_x, d_weights, d_bias). ``out`` must be the activation
    output from the forward pass.
    """
    _, deriv = activation(act)
    da = d_out * deriv(out)
    if x.ndim == 1:
        return da @ params.weights, np.outer(da, x), da
    return da @ params.weights, da.T @ x, da.sum(axis=0)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def mse_loss(pred, target):
    """Mean squared error and its gradient 2(pred - target)/n."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise NeuralError("empty prediction vector")
    if pred.shape != target.shape:
        raise NeuralError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter first/second-moment accumulators plus step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One in-place Adam update with bias correction.

    ``params`` and ``grads`` map names to same-shaped float64 arrays.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NeuralError(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------

def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(1-rate) scaled by 1/(1-rate).

    Rate 0 degenerates to the identity mask.
    """
    if not 0.0 <= rate < 1.0:
        raise NeuralError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


# ---------------------------------------------------------------------------
# Early stopping
# ---------------------------------------------------------------------------

@dataclass
class EarlyStopper:
    """Stops after patience + 1 consecutive non-improving epochs."""

    patience: int
    best: float = np.inf
    since_improvement: int = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if val_loss < self.best:
            self.best = val_loss
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        return self.since_improvement > self.patience


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def finite_difference_grad(fn, theta, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if epsilon <= 0:
        raise NeuralError("epsilon must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = epsilon
        grad[i] = (fn(theta + bump) - fn(theta - bump)) / (2.0 * epsilon)
    return grad


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Worst-coordinate relative disagreement between two gradients.

    Coordinates below ``floor`` in combined magnitude are effectively
    compared absolutely: central differences carry ~1e-12 of roundoff
    noise, which would otherwise swamp the ratio on vanishing-gradient
    coordinates.
    """
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
