"""Numba kernels mirroring :mod:`hss.kernels._numpy`."""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _sigmoid(v):
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


# The matrix products go through numpy (BLAS); numba's own np.dot would need
# scipy, and hand loops lose to BLAS once d reaches a few dozen.  What numba
# fuses is the per-element gate arithmetic between the products.


@njit(cache=True)
def _gates_rz(ax, ah, b, h):
    n, d = h.shape
    r = np.empty((n, d))
    z = np.empty((n, d))
    rh = np.empty((n, d))
    for s in range(n):
        for k in range(d):
            r[s, k] = _sigmoid(ax[s, k] + ah[s, k] + b[k])
            z[s, k] = _sigmoid(ax[s, d + k] + ah[s, d + k] + b[d + k])
            rh[s, k] = r[s, k] * h[s, k]
    return r, z, rh


@njit(cache=True)
def _gates_out(ax, ag, b, h, z, mask):
    n, d = h.shape
    g = np.empty((n, d))
    h_new = np.empty((n, d))
    for s in range(n):
        m = mask[s]
        for k in range(d):
            gv = math.tanh(ax[s, 2 * d + k] + ag[s, k] + b[2 * d + k])
            g[s, k] = gv
            hn = z[s, k] * h[s, k] + (1.0 - z[s, k]) * gv
            h_new[s, k] = m * hn + (1.0 - m) * h[s, k]
    return h_new, g


def gru_forward(x, h, w_x, w_h, b, mask):
    d = h.shape[1]
    ax = x @ w_x.T
    ah = h @ w_h[: 2 * d].T
    r, z, rh = _gates_rz(ax, ah, b, h)
    h_new, g = _gates_out(ax, rh @ w_h[2 * d :].T, b, h, z, mask)
    return h_new, r, z, g


@njit(cache=True)
def _grad_zg(dh_new, h, z, g, mask):
    n, d = h.shape
    da = np.empty((n, 3 * d))
    dh = np.empty((n, d))
    for s in range(n):
        m = mask[s]
        for k in range(d):
            de = dh_new[s, k] * m
            dh[s, k] = de * z[s, k] + dh_new[s, k] * (1.0 - m)
            da[s, 2 * d + k] = de * (1.0 - z[s, k]) * (1.0 - g[s, k] * g[s, k])
            da[s, d + k] = de * (h[s, k] - g[s, k]) * z[s, k] * (1.0 - z[s, k])
    return da, dh


@njit(cache=True)
def _grad_r(drh, h, r, da, dh):
    n, d = h.shape
    rh = np.empty((n, d))
    for s in range(n):
        for k in range(d):
            rv = r[s, k]
            dh[s, k] += drh[s, k] * rv
            da[s, k] = drh[s, k] * h[s, k] * rv * (1.0 - rv)
            rh[s, k] = rv * h[s, k]
    return rh


def gru_backward(dh_new, x, h, w_x, w_h, r, z, g, mask):
    d = h.shape[1]
    da, dh = _grad_zg(dh_new, h, z, g, mask)
    dag = da[:, 2 * d :]
    rh = _grad_r(dag @ w_h[2 * d :], h, r, da, dh)
    dx = da @ w_x
    dw_x = da.T @ x
    dw_h = np.empty_like(w_h)
    dw_h[: 2 * d] = da[:, : 2 * d].T @ h
    dw_h[2 * d :] = dag.T @ rh
    dh += da[:, : 2 * d] @ w_h[: 2 * d]
    db = da.sum(axis=0)
    return dx, dh, dw_x, dw_h, db


@njit(cache=True)
def _lcs(a, b):
    n = a.shape[0]
    m = b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        cur[0] = 0
        for j in range(m):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            elif cur[j] > prev[j + 1]:
                cur[j + 1] = cur[j]
            else:
                cur[j + 1] = prev[j + 1]
        prev, cur = cur, prev
    return prev[m]


def lcs_length(a, b):
    if len(a) == 0 or len(b) == 0:
        return 0
    return int(_lcs(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))
