"""Pure-numpy reference kernels.

Gate layout for the GRU weights is ``[reset; update; candidate]`` stacked
along the first axis, so ``w_x`` is ``(3d, d_in)``, ``w_h`` is ``(3d, d)``
and ``b`` is ``(3d,)``.
"""

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_forward(x, h, w_x, w_h, b, mask):
    d = h.shape[1]
    ax = x @ w_x.T
    ah = h @ w_h[: 2 * d].T
    r = _sigmoid(ax[:, :d] + ah[:, :d] + b[:d])
    z = _sigmoid(ax[:, d : 2 * d] + ah[:, d:] + b[d : 2 * d])
    rh = r * h
    g = np.tanh(ax[:, 2 * d :] + rh @ w_h[2 * d :].T + b[2 * d :])
    h_new = z * h + (1.0 - z) * g
    m = mask[:, None]
    h_new = m * h_new + (1.0 - m) * h
    return h_new, r, z, g


def gru_backward(dh_new, x, h, w_x, w_h, r, z, g, mask):
    d = h.shape[1]
    m = mask[:, None]
    dh_eff = dh_new * m
    dz = dh_eff * (h - g)
    dg = dh_eff * (1.0 - z)
    dh = dh_eff * z + dh_new * (1.0 - m)
    dag = dg * (1.0 - g * g)
    daz = dz * z * (1.0 - z)
    drh = dag @ w_h[2 * d :]
    dh += drh * r
    dar = drh * h * r * (1.0 - r)
    da = np.concatenate([dar, daz, dag], axis=1)
    dx = da @ w_x
    dw_x = da.T @ x
    dw_h = np.empty_like(w_h)
    dw_h[: 2 * d] = da[:, : 2 * d].T @ h
    dw_h[2 * d :] = dag.T @ (r * h)
    dh += da[:, : 2 * d] @ w_h[: 2 * d]
    db = da.sum(axis=0)
    return dx, dh, dw_x, dw_h, db


def lcs_length(a, b):
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    prev = [0] * (m + 1)
    for i in range(n):
        cur = [0] * (m + 1)
        ai = a[i]
        for j in range(m):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = cur[j] if cur[j] > prev[j + 1] else prev[j + 1]
        prev = cur
    return prev[m]
