# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrent layer kernels.

Signature-for-signature mirror of the numpy reference backend; see
reference.py for the layout and gate conventions. Loops run without the
GIL so independent trainings can share a thread pool.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

ctypedef cnp.float64_t f64


cdef inline double _sig(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


def rnn_forward(cnp.ndarray[f64, ndim=3] X, cnp.ndarray[f64, ndim=2] W,
                cnp.ndarray[f64, ndim=2] U, cnp.ndarray[f64, ndim=1] b):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], I = X.shape[2], H = W.shape[0]
    cdef cnp.ndarray[f64, ndim=3] Hs = np.empty((B, T, H))
    cdef double[:, :, ::1] Xv = X, Hv = Hs
    cdef double[:, ::1] Wv = W, Uv = U
    cdef double[::1] bv = b
    cdef Py_ssize_t bi, t, j, k
    cdef double acc
    with nogil:
        for bi in range(B):
            for t in range(T):
                for j in range(H):
                    acc = bv[j]
                    for k in range(I):
                        acc += Wv[j, k] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            acc += Uv[j, k] * Hv[bi, t - 1, k]
                    Hv[bi, t, j] = tanh(acc)
    return Hs


def rnn_backward(cnp.ndarray[f64, ndim=3] X, cnp.ndarray[f64, ndim=2] W,
                 cnp.ndarray[f64, ndim=2] U, cnp.ndarray[f64, ndim=3] Hs,
                 cnp.ndarray[f64, ndim=3] dH):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], I = X.shape[2], H = W.shape[0]
    cdef cnp.ndarray[f64, ndim=3] dX = np.zeros((B, T, I))
    cdef cnp.ndarray[f64, ndim=2] dW = np.zeros((H, I))
    cdef cnp.ndarray[f64, ndim=2] dU = np.zeros((H, H))
    cdef cnp.ndarray[f64, ndim=1] db = np.zeros(H)
    cdef cnp.ndarray[f64, ndim=1] carry = np.zeros(H)
    cdef cnp.ndarray[f64, ndim=1] da = np.zeros(H)
    cdef cnp.ndarray[f64, ndim=1] nc = np.zeros(H)
    cdef double[:, :, ::1] Xv = X, Hv = Hs, dHv = dH, dXv = dX
    cdef double[:, ::1] Wv = W, Uv = U, dWv = dW, dUv = dU
    cdef double[::1] dbv = db, cv = carry, dav = da, ncv = nc
    cdef Py_ssize_t bi, t, j, k
    cdef double h, acc
    with nogil:
        for bi in range(B):
            for j in range(H):
                cv[j] = 0.0
            for t in range(T - 1, -1, -1):
                for j in range(H):
                    h = Hv[bi, t, j]
                    dav[j] = (dHv[bi, t, j] + cv[j]) * (1.0 - h * h)
                for j in range(H):
                    dbv[j] += dav[j]
                    for k in range(I):
                        dWv[j, k] += dav[j] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            dUv[j, k] += dav[j] * Hv[bi, t - 1, k]
                for k in range(I):
                    acc = 0.0
                    for j in range(H):
                        acc += dav[j] * Wv[j, k]
                    dXv[bi, t, k] = acc
                for k in range(H):
                    acc = 0.0
                    for j in range(H):
                        acc += dav[j] * Uv[j, k]
                    ncv[k] = acc
                for k in range(H):
                    cv[k] = ncv[k]
    return dX, dW, dU, db


def gru_forward(cnp.ndarray[f64, ndim=3] X, cnp.ndarray[f64, ndim=3] W,
                cnp.ndarray[f64, ndim=3] U, cnp.ndarray[f64, ndim=2] b):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], I = X.shape[2], H = W.shape[1]
    cdef cnp.ndarray[f64, ndim=3] Hs = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] Z = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] R = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] N = np.empty((B, T, H))
    cdef double[:, :, ::1] Xv = X, Hv = Hs, Zv = Z, Rv = R, Nv = N, Wv = W, Uv = U
    cdef double[:, ::1] bv = b
    cdef Py_ssize_t bi, t, j, k
    cdef double az, ar, an, hp
    with nogil:
        for bi in range(B):
            for t in range(T):
                for j in range(H):
                    az = bv[0, j]
                    ar = bv[1, j]
                    for k in range(I):
                        az += Wv[0, j, k] * Xv[bi, t, k]
                        ar += Wv[1, j, k] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            hp = Hv[bi, t - 1, k]
                            az += Uv[0, j, k] * hp
                            ar += Uv[1, j, k] * hp
                    Zv[bi, t, j] = _sig(az)
                    Rv[bi, t, j] = _sig(ar)
                for j in range(H):
                    an = bv[2, j]
                    for k in range(I):
                        an += Wv[2, j, k] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            an += Uv[2, j, k] * (Rv[bi, t, k] * Hv[bi, t - 1, k])
                    Nv[bi, t, j] = tanh(an)
                for j in range(H):
                    hp = Hv[bi, t - 1, j] if t > 0 else 0.0
                    Hv[bi, t, j] = (1.0 - Zv[bi, t, j]) * hp + Zv[bi, t, j] * Nv[bi, t, j]
    return Hs, Z, R, N


def gru_backward(cnp.ndarray[f64, ndim=3] X, cnp.ndarray[f64, ndim=3] W,
                 cnp.ndarray[f64, ndim=3] U, cnp.ndarray[f64, ndim=3] Hs,
                 cnp.ndarray[f64, ndim=3] Z, cnp.ndarray[f64, ndim=3] R,
                 cnp.ndarray[f64, ndim=3] N, cnp.ndarray[f64, ndim=3] dH):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], I = X.shape[2], H = W.shape[1]
    cdef cnp.ndarray[f64, ndim=3] dX = np.zeros((B, T, I))
    cdef cnp.ndarray[f64, ndim=3] dW = np.zeros((3, H, I))
    cdef cnp.ndarray[f64, ndim=3] dU = np.zeros((3, H, H))
    cdef cnp.ndarray[f64, ndim=2] db = np.zeros((3, H))
    cdef cnp.ndarray[f64, ndim=2] tmp = np.zeros((7, H))
    cdef double[:, :, ::1] Xv = X, Wv = W, Uv = U, Hv = Hs, Zv = Z, Rv = R, Nv = N
    cdef double[:, :, ::1] dHv = dH, dXv = dX, dWv = dW, dUv = dU
    cdef double[:, ::1] dbv = db, tv = tmp
    # tmp rows: 0 carry, 1 dh, 2 dan, 3 dz, 4 daz, 5 dar, 6 dq
    cdef Py_ssize_t bi, t, j, k
    cdef double g, z, r, n, hp, acc, dn
    with nogil:
        for bi in range(B):
            for j in range(H):
                tv[0, j] = 0.0
            for t in range(T - 1, -1, -1):
                for j in range(H):
                    z = Zv[bi, t, j]
                    n = Nv[bi, t, j]
                    hp = Hv[bi, t - 1, j] if t > 0 else 0.0
                    g = dHv[bi, t, j] + tv[0, j]
                    dn = g * z
                    tv[3, j] = g * (n - hp)
                    tv[1, j] = g * (1.0 - z)
                    tv[2, j] = dn * (1.0 - n * n)
                for j in range(H):
                    dbv[2, j] += tv[2, j]
                    for k in range(I):
                        dWv[2, j, k] += tv[2, j] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            dUv[2, j, k] += tv[2, j] * (Rv[bi, t, k] * Hv[bi, t - 1, k])
                for k in range(H):
                    acc = 0.0
                    for j in range(H):
                        acc += tv[2, j] * Uv[2, j, k]
                    tv[6, k] = acc
                for j in range(H):
                    z = Zv[bi, t, j]
                    r = Rv[bi, t, j]
                    hp = Hv[bi, t - 1, j] if t > 0 else 0.0
                    tv[1, j] += tv[6, j] * r
                    tv[4, j] = tv[3, j] * z * (1.0 - z)
                    tv[5, j] = (tv[6, j] * hp) * r * (1.0 - r)
                for j in range(H):
                    dbv[0, j] += tv[4, j]
                    dbv[1, j] += tv[5, j]
                    for k in range(I):
                        dWv[0, j, k] += tv[4, j] * Xv[bi, t, k]
                        dWv[1, j, k] += tv[5, j] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            hp = Hv[bi, t - 1, k]
                            dUv[0, j, k] += tv[4, j] * hp
                            dUv[1, j, k] += tv[5, j] * hp
                for k in range(I):
                    acc = 0.0
                    for j in range(H):
                        acc += tv[4, j] * Wv[0, j, k] + tv[5, j] * Wv[1, j, k] + tv[2, j] * Wv[2, j, k]
                    dXv[bi, t, k] = acc
                for k in range(H):
                    acc = tv[1, k]
                    for j in range(H):
                        acc += tv[4, j] * Uv[0, j, k] + tv[5, j] * Uv[1, j, k]
                    tv[0, k] = acc
    return dX, dW, dU, db


def lstm_forward(cnp.ndarray[f64, ndim=3] X, cnp.ndarray[f64, ndim=3] W,
                 cnp.ndarray[f64, ndim=3] U, cnp.ndarray[f64, ndim=2] b):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], I = X.shape[2], H = W.shape[1]
    cdef cnp.ndarray[f64, ndim=3] Hs = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] Cs = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] Ig = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] F = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] G = np.empty((B, T, H))
    cdef cnp.ndarray[f64, ndim=3] O = np.empty((B, T, H))
    cdef double[:, :, ::1] Xv = X, Hv = Hs, Cv = Cs, Iv = Ig, Fv = F, Gv = G, Ov = O, Wv = W, Uv = U
    cdef double[:, ::1] bv = b
    cdef Py_ssize_t bi, t, j, k
    cdef double ai, af, ag, ao, hp, cp, c
    with nogil:
        for bi in range(B):
            for t in range(T):
                for j in range(H):
                    ai = bv[0, j]
                    af = bv[1, j]
                    ag = bv[2, j]
                    ao = bv[3, j]
                    for k in range(I):
                        ai += Wv[0, j, k] * Xv[bi, t, k]
                        af += Wv[1, j, k] * Xv[bi, t, k]
                        ag += Wv[2, j, k] * Xv[bi, t, k]
                        ao += Wv[3, j, k] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            hp = Hv[bi, t - 1, k]
                            ai += Uv[0, j, k] * hp
                            af += Uv[1, j, k] * hp
                            ag += Uv[2, j, k] * hp
                            ao += Uv[3, j, k] * hp
                    Iv[bi, t, j] = _sig(ai)
                    Fv[bi, t, j] = _sig(af)
                    Gv[bi, t, j] = tanh(ag)
                    Ov[bi, t, j] = _sig(ao)
                    cp = Cv[bi, t - 1, j] if t > 0 else 0.0
                    c = Fv[bi, t, j] * cp + Iv[bi, t, j] * Gv[bi, t, j]
                    Cv[bi, t, j] = c
                    Hv[bi, t, j] = Ov[bi, t, j] * tanh(c)
    return Hs, Cs, Ig, F, G, O


def lstm_backward(cnp.ndarray[f64, ndim=3] X, cnp.ndarray[f64, ndim=3] W,
                  cnp.ndarray[f64, ndim=3] U, cnp.ndarray[f64, ndim=3] Hs,
                  cnp.ndarray[f64, ndim=3] Cs, cnp.ndarray[f64, ndim=3] Ig,
                  cnp.ndarray[f64, ndim=3] F, cnp.ndarray[f64, ndim=3] G,
                  cnp.ndarray[f64, ndim=3] O, cnp.ndarray[f64, ndim=3] dH):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], I = X.shape[2], H = W.shape[1]
    cdef cnp.ndarray[f64, ndim=3] dX = np.zeros((B, T, I))
    cdef cnp.ndarray[f64, ndim=3] dW = np.zeros((4, H, I))
    cdef cnp.ndarray[f64, ndim=3] dU = np.zeros((4, H, H))
    cdef cnp.ndarray[f64, ndim=2] db = np.zeros((4, H))
    cdef cnp.ndarray[f64, ndim=2] tmp = np.zeros((7, H))
    cdef double[:, :, ::1] Xv = X, Wv = W, Uv = U, Hv = Hs, Cv = Cs
    cdef double[:, :, ::1] Iv = Ig, Fv = F, Gv = G, Ov = O, dHv = dH, dXv = dX, dWv = dW, dUv = dU
    cdef double[:, ::1] dbv = db, tv = tmp
    # tmp rows: 0 carry_h, 1 carry_c, 2 dai, 3 daf, 4 dag, 5 dao, 6 next carry_c
    cdef Py_ssize_t bi, t, j, k
    cdef double gh, gc, tc, i_, f_, g_, o_, cp, hp, acc
    with nogil:
        for bi in range(B):
            for j in range(H):
                tv[0, j] = 0.0
                tv[1, j] = 0.0
            for t in range(T - 1, -1, -1):
                for j in range(H):
                    i_ = Iv[bi, t, j]
                    f_ = Fv[bi, t, j]
                    g_ = Gv[bi, t, j]
                    o_ = Ov[bi, t, j]
                    cp = Cv[bi, t - 1, j] if t > 0 else 0.0
                    tc = tanh(Cv[bi, t, j])
                    gh = dHv[bi, t, j] + tv[0, j]
                    gc = gh * o_ * (1.0 - tc * tc) + tv[1, j]
                    tv[2, j] = (gc * g_) * i_ * (1.0 - i_)
                    tv[3, j] = (gc * cp) * f_ * (1.0 - f_)
                    tv[4, j] = (gc * i_) * (1.0 - g_ * g_)
                    tv[5, j] = (gh * tc) * o_ * (1.0 - o_)
                    tv[6, j] = gc * f_
                for j in range(H):
                    dbv[0, j] += tv[2, j]
                    dbv[1, j] += tv[3, j]
                    dbv[2, j] += tv[4, j]
                    dbv[3, j] += tv[5, j]
                    for k in range(I):
                        dWv[0, j, k] += tv[2, j] * Xv[bi, t, k]
                        dWv[1, j, k] += tv[3, j] * Xv[bi, t, k]
                        dWv[2, j, k] += tv[4, j] * Xv[bi, t, k]
                        dWv[3, j, k] += tv[5, j] * Xv[bi, t, k]
                    if t > 0:
                        for k in range(H):
                            hp = Hv[bi, t - 1, k]
                            dUv[0, j, k] += tv[2, j] * hp
                            dUv[1, j, k] += tv[3, j] * hp
                            dUv[2, j, k] += tv[4, j] * hp
                            dUv[3, j, k] += tv[5, j] * hp
                for k in range(I):
                    acc = 0.0
                    for j in range(H):
                        acc += (tv[2, j] * Wv[0, j, k] + tv[3, j] * Wv[1, j, k]
                                + tv[4, j] * Wv[2, j, k] + tv[5, j] * Wv[3, j, k])
                    dXv[bi, t, k] = acc
                for k in range(H):
                    acc = 0.0
                    for j in range(H):
                        acc += (tv[2, j] * Uv[0, j, k] + tv[3, j] * Uv[1, j, k]
                                + tv[4, j] * Uv[2, j, k] + tv[5, j] * Uv[3, j, k])
                    tv[0, k] = acc
                for k in range(H):
                    tv[1, k] = tv[6, k]
    return dX, dW, dU, db
