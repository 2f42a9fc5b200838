"""Pure-numpy GRU scan kernels (fallback when the compiled module is absent)."""

import numpy as np
from scipy.special import expit as sigmoid


def gru_forward(xproj, w_hh, b_hh, reverse):
    """Forward GRU scan.

    Returns hidden states (B, T, H) and a cache of gate activations
    (r, z, n, hn) where hn = W_hn h_prev + b_hn, each (T, B, H).
    """
    B, T, H3 = xproj.shape
    H = H3 // 3
    hs = np.empty((B, T, H))
    r_all = np.empty((T, B, H))
    z_all = np.empty((T, B, H))
    n_all = np.empty((T, B, H))
    hn_all = np.empty((T, B, H))
    wt = w_hh.T
    h = np.zeros((B, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        a = xproj[:, t]
        u = h @ wt
        u += b_hh
        r = sigmoid(a[:, :H] + u[:, :H])
        z = sigmoid(a[:, H:2 * H] + u[:, H:2 * H])
        hn = u[:, 2 * H:]
        n = np.tanh(a[:, 2 * H:] + r * hn)
        h = n + z * (h - n)
        hs[:, t] = h
        r_all[t] = r
        z_all[t] = z
        n_all[t] = n
        hn_all[t] = hn
    return hs, (r_all, z_all, n_all, hn_all)


def gru_backward(g_hs, w_hh, hs, cache, reverse):
    """Backward GRU scan; returns grads for (xproj, w_hh, b_hh)."""
    r_all, z_all, n_all, hn_all = cache
    B, T, H = hs.shape
    g_x = np.empty((B, T, 3 * H))
    g_w = np.zeros((3 * H, H))
    g_b = np.zeros(3 * H)
    dh_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    order = list(range(T)) if reverse else list(range(T - 1, -1, -1))
    for i, t in enumerate(order):
        # previous hidden state in scan order
        if reverse:
            h_prev = hs[:, t + 1] if t + 1 < T else zeros
        else:
            h_prev = hs[:, t - 1] if t > 0 else zeros
        r, z, n, hn = r_all[t], z_all[t], n_all[t], hn_all[t]
        dh = g_hs[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dn_pre = dn * (1.0 - n * n)
        dr_pre = dn_pre * hn * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        du = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        g_x[:, t, :H] = dr_pre
        g_x[:, t, H:2 * H] = dz_pre
        g_x[:, t, 2 * H:] = dn_pre
        g_w += du.T @ h_prev
        g_b += du.sum(axis=0)
        dh_next = dh * z + du @ w_hh
    return g_x, g_w, g_b
