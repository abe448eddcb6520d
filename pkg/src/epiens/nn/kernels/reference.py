"""Pure-numpy recurrent layer kernels (the portable fallback backend).

Each function is mirrored exactly by the compiled backend in ``_fast``;
the two must agree to floating-point noise. Shapes follow the batched
convention X (B, T, in), hidden sequences (B, T, H), gate parameter
stacks (n_gates, H, in) / (n_gates, H, H) / (n_gates, H). Initial hidden
and cell states are zero.

GRU gate order: update, reset, candidate, with the update gate gating in
the candidate: h' = (1-z) * h + z * n and n = tanh(Wn x + Un (r*h) + bn).
LSTM gate order: input, forget, cell, output.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def rnn_forward(X, W, U, b):
    B, T, _ = X.shape
    H = W.shape[0]
    Hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        h = np.tanh(X[:, t] @ W.T + h @ U.T + b)
        Hs[:, t] = h
    return Hs


def rnn_backward(X, W, U, Hs, dH):
    B, T, _ = X.shape
    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(W.shape[0])
    carry = np.zeros((B, W.shape[0]))
    for t in range(T - 1, -1, -1):
        h = Hs[:, t]
        h_prev = Hs[:, t - 1] if t > 0 else np.zeros_like(h)
        da = (dH[:, t] + carry) * (1.0 - h * h)
        dW += da.T @ X[:, t]
        dU += da.T @ h_prev
        db += da.sum(axis=0)
        dX[:, t] = da @ W
        carry = da @ U
    return dX, dW, dU, db


def gru_forward(X, W, U, b):
    B, T, _ = X.shape
    H = W.shape[1]
    Hs = np.empty((B, T, H))
    Z = np.empty((B, T, H))
    R = np.empty((B, T, H))
    N = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        x = X[:, t]
        z = _sigmoid(x @ W[0].T + h @ U[0].T + b[0])
        r = _sigmoid(x @ W[1].T + h @ U[1].T + b[1])
        n = np.tanh(x @ W[2].T + (r * h) @ U[2].T + b[2])
        h = (1.0 - z) * h + z * n
        Z[:, t], R[:, t], N[:, t], Hs[:, t] = z, r, n, h
    return Hs, Z, R, N


def gru_backward(X, W, U, Hs, Z, R, N, dH):
    B, T, _ = X.shape
    H = W.shape[1]
    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros((3, H))
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = Hs[:, t - 1] if t > 0 else np.zeros((B, H))
        z, r, n = Z[:, t], R[:, t], N[:, t]
        g = dH[:, t] + carry
        dn = g * z
        dz = g * (n - h_prev)
        dh = g * (1.0 - z)
        dan = dn * (1.0 - n * n)
        dW[2] += dan.T @ X[:, t]
        dU[2] += dan.T @ (r * h_prev)
        db[2] += dan.sum(axis=0)
        dq = dan @ U[2]
        dr = dq * h_prev
        dh += dq * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dW[0] += daz.T @ X[:, t]
        dU[0] += daz.T @ h_prev
        db[0] += daz.sum(axis=0)
        dW[1] += dar.T @ X[:, t]
        dU[1] += dar.T @ h_prev
        db[1] += dar.sum(axis=0)
        dX[:, t] = daz @ W[0] + dar @ W[1] + dan @ W[2]
        carry = dh + daz @ U[0] + dar @ U[1]
    return dX, dW, dU, db


def lstm_forward(X, W, U, b):
    B, T, _ = X.shape
    H = W.shape[1]
    Hs = np.empty((B, T, H))
    Cs = np.empty((B, T, H))
    Ig = np.empty((B, T, H))
    F = np.empty((B, T, H))
    G = np.empty((B, T, H))
    O = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        x = X[:, t]
        i = _sigmoid(x @ W[0].T + h @ U[0].T + b[0])
        f = _sigmoid(x @ W[1].T + h @ U[1].T + b[1])
        g = np.tanh(x @ W[2].T + h @ U[2].T + b[2])
        o = _sigmoid(x @ W[3].T + h @ U[3].T + b[3])
        c = f * c + i * g
        h = o * np.tanh(c)
        Ig[:, t], F[:, t], G[:, t], O[:, t] = i, f, g, o
        Cs[:, t], Hs[:, t] = c, h
    return Hs, Cs, Ig, F, G, O


def lstm_backward(X, W, U, Hs, Cs, Ig, F, G, O, dH):
    B, T, _ = X.shape
    H = W.shape[1]
    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros((4, H))
    carry_h = np.zeros((B, H))
    carry_c = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = Hs[:, t - 1] if t > 0 else np.zeros((B, H))
        c_prev = Cs[:, t - 1] if t > 0 else np.zeros((B, H))
        i, f, g, o = Ig[:, t], F[:, t], G[:, t], O[:, t]
        tc = np.tanh(Cs[:, t])
        gh = dH[:, t] + carry_h
        do = gh * tc
        gc = gh * o * (1.0 - tc * tc) + carry_c
        di = gc * g
        df = gc * c_prev
        dg = gc * i
        dai = di * i * (1.0 - i)
        daf = df * f * (1.0 - f)
        dag = dg * (1.0 - g * g)
        dao = do * o * (1.0 - o)
        for k, da in enumerate((dai, daf, dag, dao)):
            dW[k] += da.T @ X[:, t]
            dU[k] += da.T @ h_prev
            db[k] += da.sum(axis=0)
        dX[:, t] = dai @ W[0] + daf @ W[1] + dag @ W[2] + dao @ W[3]
        carry_h = dai @ U[0] + daf @ U[1] + dag @ U[2] + dao @ U[3]
        carry_c = gc * f
    return dX, dW, dU, db
