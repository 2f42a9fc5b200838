# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU scan kernels.

Same contract as ``_reference.gru_forward`` / ``gru_backward``.  The
recurrent matmuls go straight to BLAS through scipy's cython_blas; the
gate arithmetic is fused into plain loops with the GIL released.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] src = arr.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i, n = src.shape[0]
    with nogil:
        for i in range(n):
            dst[i] = _sig(src[i])
    return out


def gru_forward(double[:, :, ::1] xproj, double[:, ::1] w_hh, double[::1] b_hh, bint reverse):
    cdef int B = xproj.shape[0]
    cdef int T = xproj.shape[1]
    cdef int H3 = xproj.shape[2]
    cdef int H = H3 // 3
    hs_arr = np.empty((B, T, H))
    r_arr = np.empty((T, B, H))
    z_arr = np.empty((T, B, H))
    n_arr = np.empty((T, B, H))
    hn_arr = np.empty((T, B, H))
    u_arr = np.empty((B, H3))
    h_arr = np.zeros((B, H))
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] r_all = r_arr
    cdef double[:, :, ::1] z_all = z_arr
    cdef double[:, :, ::1] n_all = n_arr
    cdef double[:, :, ::1] hn_all = hn_arr
    cdef double[:, ::1] u = u_arr
    cdef double[:, ::1] h = h_arr
    cdef int step, t, b, j
    cdef double r, z, n, hn
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double one = 1.0, zero = 0.0
    with nogil:
        for step in range(T):
            t = T - 1 - step if reverse else step
            if step > 0:
                # u = h @ w_hh.T  (row-major), computed as col-major W^T' h^T
                dgemm(&ta, &tb, &H3, &B, &H, &one, &w_hh[0, 0], &H, &h[0, 0], &H, &zero, &u[0, 0], &H3)
            else:
                for b in range(B):
                    for j in range(H3):
                        u[b, j] = 0.0
            for b in range(B):
                for j in range(H):
                    r = _sig(xproj[b, t, j] + u[b, j] + b_hh[j])
                    z = _sig(xproj[b, t, H + j] + u[b, H + j] + b_hh[H + j])
                    hn = u[b, 2 * H + j] + b_hh[2 * H + j]
                    n = tanh(xproj[b, t, 2 * H + j] + r * hn)
                    h[b, j] = n + z * (h[b, j] - n)
                    hs[b, t, j] = h[b, j]
                    r_all[t, b, j] = r
                    z_all[t, b, j] = z
                    n_all[t, b, j] = n
                    hn_all[t, b, j] = hn
    return hs_arr, (r_arr, z_arr, n_arr, hn_arr)


def gru_backward(g_hs_in, double[:, ::1] w_hh, hs_in, cache, bint reverse):
    cdef double[:, :, ::1] g_hs = np.ascontiguousarray(g_hs_in)
    cdef double[:, :, ::1] hs = hs_in
    cdef double[:, :, ::1] r_all = cache[0]
    cdef double[:, :, ::1] z_all = cache[1]
    cdef double[:, :, ::1] n_all = cache[2]
    cdef double[:, :, ::1] hn_all = cache[3]
    cdef int B = hs.shape[0]
    cdef int T = hs.shape[1]
    cdef int H = hs.shape[2]
    cdef int H3 = 3 * H
    cdef int ldh = T * H
    gx_arr = np.empty((B, T, H3))
    gw_arr = np.zeros((H3, H))
    gb_arr = np.zeros(H3)
    du_arr = np.empty((B, H3))
    dh_arr = np.zeros((B, H))
    cdef double[:, :, ::1] g_x = gx_arr
    cdef double[:, ::1] g_w = gw_arr
    cdef double[::1] g_b = gb_arr
    cdef double[:, ::1] du = du_arr
    cdef double[:, ::1] dh = dh_arr
    cdef int step, t, tp, b, j
    cdef double r, z, n, hn, d, hp, dn_pre, dr_pre, dz_pre
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    with nogil:
        for step in range(T):
            t = step if reverse else T - 1 - step
            tp = t + 1 if reverse else t - 1
            for b in range(B):
                for j in range(H):
                    r = r_all[t, b, j]
                    z = z_all[t, b, j]
                    n = n_all[t, b, j]
                    hn = hn_all[t, b, j]
                    hp = hs[b, tp, j] if 0 <= tp < T else 0.0
                    d = g_hs[b, t, j] + dh[b, j]
                    dn_pre = d * (1.0 - z) * (1.0 - n * n)
                    dr_pre = dn_pre * hn * r * (1.0 - r)
                    dz_pre = d * (hp - n) * z * (1.0 - z)
                    g_x[b, t, j] = dr_pre
                    g_x[b, t, H + j] = dz_pre
                    g_x[b, t, 2 * H + j] = dn_pre
                    du[b, j] = dr_pre
                    du[b, H + j] = dz_pre
                    du[b, 2 * H + j] = dn_pre * r
                    g_b[j] += dr_pre
                    g_b[H + j] += dz_pre
                    g_b[2 * H + j] += dn_pre * r
                    dh[b, j] = d * z
            if 0 <= tp < T:
                # g_w += du.T @ h_prev, with h_prev rows strided by T*H inside hs
                dgemm(&tn, &tt, &H, &H3, &B, &one, &hs[0, tp, 0], &ldh, &du[0, 0], &H3, &one, &g_w[0, 0], &H)
            # dh += du @ w_hh
            dgemm(&tn, &tn, &H, &B, &H3, &one, &w_hh[0, 0], &H, &du[0, 0], &H3, &one, &dh[0, 0], &H)
    return gx_arr, gw_arr, gb_arr
