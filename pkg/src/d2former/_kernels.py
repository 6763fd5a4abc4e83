"""Compiled loops for the per-channel complex FIR used by the FSMN memory.

Arrays are [n, F, C] planes; taps are [C, K]; tap k reads frame f + k - lookback.
Each (n, c) row is gathered into a zero-padded contiguous buffer first so the
tap loop runs over unit-stride memory.
"""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def fir_forward(gr, gi, tr, ti, lookback, out_r, out_i):
    n, F, C = gr.shape
    K = tr.shape[1]
    br = np.zeros(F + K - 1, dtype=gr.dtype)
    bi = np.zeros(F + K - 1, dtype=gr.dtype)
    for b in range(n):
        for c in range(C):
            for f in range(F):
                br[f + lookback] = gr[b, f, c]
                bi[f + lookback] = gi[b, f, c]
            for f in range(F):
                ar = 0.0
                ai = 0.0
                for k in range(K):
                    ar += br[f + k] * tr[c, k] - bi[f + k] * ti[c, k]
                    ai += bi[f + k] * tr[c, k] + br[f + k] * ti[c, k]
                out_r[b, f, c] = ar
                out_i[b, f, c] = ai


@numba.njit(cache=True, fastmath=True)
def fir_backward(Gr, Gi, gr, gi, tr, ti, lookback, dgr, dgi, dtr, dti):
    """Input gradient G * conj(tap) and tap gradient G * conj(input)."""
    n, F, C = gr.shape
    K = tr.shape[1]
    P = F + K - 1
    xr = np.zeros(P, dtype=gr.dtype)
    xi = np.zeros(P, dtype=gr.dtype)
    # gradient rows padded the other way: input frame s collects G[s + lookback - k]
    hr = np.zeros(P, dtype=gr.dtype)
    hi = np.zeros(P, dtype=gr.dtype)
    acc_r = np.zeros((C, K))
    acc_i = np.zeros((C, K))
    rr = np.ascontiguousarray(tr[:, ::-1])
    ri = np.ascontiguousarray(ti[:, ::-1])
    for b in range(n):
        for c in range(C):
            for f in range(F):
                xr[f + lookback] = gr[b, f, c]
                xi[f + lookback] = gi[b, f, c]
                hr[f + K - 1 - lookback] = Gr[b, f, c]
                hi[f + K - 1 - lookback] = Gi[b, f, c]
            for s in range(F):
                ar = 0.0
                ai = 0.0
                for m in range(K):
                    g_r = hr[s + m]
                    g_i = hi[s + m]
                    ar += g_r * rr[c, m] + g_i * ri[c, m]
                    ai += g_i * rr[c, m] - g_r * ri[c, m]
                dgr[b, s, c] = ar
                dgi[b, s, c] = ai
            off = K - 1 - lookback
            for k in range(K):
                sr = 0.0
                si = 0.0
                for f in range(F):
                    g_r = hr[f + off]
                    g_i = hi[f + off]
                    sr += g_r * xr[f + k] + g_i * xi[f + k]
                    si += g_i * xr[f + k] - g_r * xi[f + k]
                acc_r[c, k] += sr
                acc_i[c, k] += si
    for c in range(C):
        for k in range(K):
            dtr[c, k] = acc_r[c, k]
            dti[c, k] = acc_i[c, k]


# Instance norm with complex affine on an [A, N, D] view: statistics per (a, d)
# over N, each plane standardized separately; gamma/beta are pre-broadcast to [A, D].


@numba.njit(cache=True, fastmath=True)
def inorm_forward(xr, xi, g_r, g_i, b_r, b_i, eps, out_r, out_i, mean, inv):
    A, N, D = xr.shape
    for a in range(A):
        s = np.zeros((4, D))
        for n in range(N):
            for d in range(D):
                vr = xr[a, n, d]
                vi = xi[a, n, d]
                s[0, d] += vr
                s[1, d] += vr * vr
                s[2, d] += vi
                s[3, d] += vi * vi
        for d in range(D):
            mr = s[0, d] / N
            mi = s[2, d] / N
            mean[a, d, 0] = mr
            mean[a, d, 1] = mi
            inv[a, d, 0] = 1.0 / np.sqrt(max(s[1, d] / N - mr * mr, 0.0) + eps)
            inv[a, d, 1] = 1.0 / np.sqrt(max(s[3, d] / N - mi * mi, 0.0) + eps)
        for n in range(N):
            for d in range(D):
                hr = (xr[a, n, d] - mean[a, d, 0]) * inv[a, d, 0]
                hi = (xi[a, n, d] - mean[a, d, 1]) * inv[a, d, 1]
                out_r[a, n, d] = g_r[a, d] * hr - g_i[a, d] * hi + b_r[a, d]
                out_i[a, n, d] = g_i[a, d] * hr + g_r[a, d] * hi + b_i[a, d]


@numba.njit(cache=True, fastmath=True)
def inorm_backward(Gr, Gi, xr, xi, g_r, g_i, mean, inv, dxr, dxi, dg, db):
    """dg/db are [A, D, 2] (re, im) partial sums for gamma and beta."""
    A, N, D = xr.shape
    for a in range(A):
        s = np.zeros((4, D))
        for n in range(N):
            for d in range(D):
                hr = (xr[a, n, d] - mean[a, d, 0]) * inv[a, d, 0]
                hi = (xi[a, n, d] - mean[a, d, 1]) * inv[a, d, 1]
                gr = Gr[a, n, d]
                gi = Gi[a, n, d]
                # gradient reaching the standardized planes: G * conj(gamma)
                tr = gr * g_r[a, d] + gi * g_i[a, d]
                ti = gi * g_r[a, d] - gr * g_i[a, d]
                s[0, d] += tr
                s[1, d] += tr * hr
                s[2, d] += ti
                s[3, d] += ti * hi
                dg[a, d, 0] += gr * hr + gi * hi
                dg[a, d, 1] += gi * hr - gr * hi
                db[a, d, 0] += gr
                db[a, d, 1] += gi
        for n in range(N):
            for d in range(D):
                hr = (xr[a, n, d] - mean[a, d, 0]) * inv[a, d, 0]
                hi = (xi[a, n, d] - mean[a, d, 1]) * inv[a, d, 1]
                gr = Gr[a, n, d]
                gi = Gi[a, n, d]
                tr = gr * g_r[a, d] + gi * g_i[a, d]
                ti = gi * g_r[a, d] - gr * g_i[a, d]
                dxr[a, n, d] = inv[a, d, 0] * (tr - s[0, d] / N - hr * s[1, d] / N)
                dxi[a, n, d] = inv[a, d, 1] * (ti - s[2, d] / N - hi * s[3, d] / N)


# Attention logits are [B, H, L, L]; position queries pq [B, H, L, d]; the
# relative table is passed transposed and reversed, relT [H, d, 2L-1], with
# column j - i + L - 1 for the pair (i, j) (table row i - j + L - 1), so inner
# loops over j walk forward through memory.


@numba.njit(cache=True, fastmath=True)
def attn_magnitude(lr, li, pq_r, pq_i, relT, use_rel, eps, mag, rowmax):
    """Adds position terms to lr/li in place, writes |logit| and its row maxima."""
    B, H, L, _ = lr.shape
    d = pq_r.shape[3]
    for b in range(B):
        for h in range(H):
            for i in range(L):
                if use_rel:
                    for k in range(d):
                        cr = pq_r[b, h, i, k]
                        ci = pq_i[b, h, i, k]
                        for j in range(L):
                            t = relT[h, k, j - i + L - 1]
                            lr[b, h, i, j] += cr * t
                            li[b, h, i, j] += ci * t
                m = 0.0
                for j in range(L):
                    v = np.sqrt(lr[b, h, i, j] ** 2 + li[b, h, i, j] ** 2 + eps)
                    mag[b, h, i, j] = v
                    m = max(m, v)
                rowmax[b, h, i, 0] = m


@numba.njit(cache=True, fastmath=True)
def attn_logit_grad(r, rowdot, a, mag, lr, li, scale, pq_r, pq_i, relT, use_rel, gi, gpq_r, gpq_i, grelT):
    """From r = dL/dA (GEMM result) to gradients of the real/imag logits.

    On exit ``r`` holds the real-logit gradient and ``gi`` the imaginary one;
    position-query and table gradients are accumulated when ``use_rel``.
    """
    B, H, L, _ = r.shape
    d = pq_r.shape[3]
    for b in range(B):
        for h in range(H):
            for i in range(L):
                rd = rowdot[b, h, i]
                for j in range(L):
                    t = (r[b, h, i, j] - rd) * a[b, h, i, j] * scale / mag[b, h, i, j]
                    r[b, h, i, j] = lr[b, h, i, j] * t
                    gi[b, h, i, j] = li[b, h, i, j] * t
                if use_rel:
                    for k in range(d):
                        cr = pq_r[b, h, i, k]
                        ci = pq_i[b, h, i, k]
                        sr = 0.0
                        si = 0.0
                        for j in range(L):
                            t = relT[h, k, j - i + L - 1]
                            sr += r[b, h, i, j] * t
                            si += gi[b, h, i, j] * t
                        # separate loop: the scatter would otherwise block vectorization
                        for j in range(L):
                            grelT[h, k, j - i + L - 1] += r[b, h, i, j] * cr + gi[b, h, i, j] * ci
                        gpq_r[b, h, i, k] = sr
                        gpq_i[b, h, i, k] = si
