"""Complex multi-head self-attention with magnitude softmax.

Attention weights are ``softmax(|Q K^T| / sqrt(d_k))``: real, row-stochastic,
and applied to the real and imaginary planes of V alike.  Relative sinusoidal
position terms are added to the real and imaginary logit planes separately.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import _kernels
from . import ctensor as ct
from .ctensor import ComplexTensor, DimensionError, RealTensor, track
from .layers import ComplexLinear, Module, complex_param

EPS_MAG = ct.EPS_MAG


def sinusoid_table(length: int, dim: int, dtype=None) -> np.ndarray:
    """Encodings for relative offsets -(length-1)..(length-1), shape [2L-1, dim].

    Row ``m`` holds offset ``i - j = m - (length - 1)``.
    """
    dtype = dtype or ct.default_dtype()
    pos = np.arange(length - 1, -length, -1, dtype=np.float64)[::-1]
    inv = 1.0 / (10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim))
    ang = pos[:, None] * inv[None, :]
    table = np.zeros((2 * length - 1, dim))
    table[:, 0::2] = np.sin(ang)
    table[:, 1::2] = np.cos(ang)[:, : dim // 2]
    return table.astype(dtype)


def relative_view(r: np.ndarray, length: int) -> np.ndarray:
    """Zero-copy view ``out[h, i, j] = r[h, i - j + length - 1]`` of r [H, 2L-1, d]."""
    r = np.ascontiguousarray(r)
    sh, sm, sd = r.strides
    base = r[:, length - 1:]
    return as_strided(base, shape=(r.shape[0], length, length, r.shape[2]),
                      strides=(sh, sm, -sm, sd), writeable=False)


def _diag_sums(x: np.ndarray, length: int) -> np.ndarray:
    """Adjoint of :func:`relative_view`: x [H, L, L, d] -> [H, 2L-1, d]."""
    H, _, _, d = x.shape
    idx = (np.arange(length)[:, None] - np.arange(length)[None, :] + length - 1).ravel()
    out = np.empty((H, 2 * length - 1, d), dtype=x.dtype)
    for h in range(H):
        for k in range(d):
            out[h, :, k] = np.bincount(idx, weights=x[h, :, :, k].ravel(), minlength=2 * length - 1)
    return out


def _as4(x: np.ndarray, heads: int) -> np.ndarray:
    return x.reshape((-1, heads) + x.shape[-2:])


def complex_attention(q: ComplexTensor, k: ComplexTensor, v: ComplexTensor,
                      pq: ComplexTensor | None = None, rel: RealTensor | None = None) -> ComplexTensor:
    """Fused magnitude-softmax attention over [..., H, L, d] heads.

    Without position terms: ``softmax(|Q K^T| / sqrt(d)) V``.  With them,
    the logits gain ``Re: PQ_R . R[i-j]`` and ``Im: PQ_I . R[i-j]`` where
    ``pq`` are the position queries and ``rel`` is [H, 2L-1, d].
    """
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    L, d = q.shape[-2], q.shape[-1]
    H = q.shape[-3] if q.ndim >= 3 else 1
    use_rel = rel is not None
    if use_rel and (pq is None or pq.shape != q.shape or rel.shape != (H, 2 * L - 1, d)):
        raise DimensionError(f"position inputs do not match queries {q.shape}")
    scale = 1.0 / np.sqrt(d)
    qcat = np.concatenate([q.re, q.im], axis=-1)
    kr_t, ki_t = np.swapaxes(k.re, -1, -2), np.swapaxes(k.im, -1, -2)
    # Re(Q K^T) = Q_R K_R^T - Q_I K_I^T and Im(Q K^T) = Q_R K_I^T + Q_I K_R^T
    lr = qcat @ np.concatenate([kr_t, -ki_t], axis=-2)
    li = qcat @ np.concatenate([ki_t, kr_t], axis=-2)
    dtype = lr.dtype
    if use_rel:
        pr = np.ascontiguousarray(_as4(pq.re, H))
        pi = np.ascontiguousarray(_as4(pq.im, H))
        table = np.ascontiguousarray(np.swapaxes(rel.data, -1, -2)[..., ::-1])
    else:
        pr = pi = np.zeros((1, 1, 1, 1), dtype)
        table = np.zeros((1, 1, 1), dtype)
    mag = np.empty_like(lr)
    rowmax = np.empty(lr.shape[:-1] + (1,), dtype)
    _kernels.attn_magnitude(_as4(lr, H), _as4(li, H), pr, pi, table, use_rel, EPS_MAG,
                            _as4(mag, H), _as4(rowmax, H))
    a = mag - rowmax
    a *= scale
    np.exp(a, out=a)
    a /= a.sum(axis=-1, keepdims=True)
    vcat = np.concatenate([v.re, v.im], axis=-1)
    ocat = a @ vcat
    out = ComplexTensor(np.ascontiguousarray(ocat[..., :d]), np.ascontiguousarray(ocat[..., d:]))

    def backward(g):
        gcat = np.concatenate(g, axis=-1)
        gv = np.swapaxes(a, -1, -2) @ gcat
        gr = gcat @ np.swapaxes(vcat, -1, -2)
        rowdot = (gcat * ocat).sum(axis=-1)
        gi = np.empty_like(gr)
        gpr, gpi = np.empty_like(pr), np.empty_like(pi)
        grel = np.zeros_like(table)
        _kernels.attn_logit_grad(_as4(gr, H), rowdot.reshape((-1, H, L)), _as4(a, H), _as4(mag, H),
                                 _as4(lr, H), _as4(li, H), scale, pr, pi, table, use_rel,
                                 _as4(gi, H), gpr, gpi, grel)
        kcat_r = np.concatenate([k.re, -k.im], axis=-1)
        kcat_i = np.concatenate([k.im, k.re], axis=-1)
        gq = gr @ kcat_r + gi @ kcat_i
        a1 = np.swapaxes(gr, -1, -2) @ qcat
        b1 = np.swapaxes(gi, -1, -2) @ qcat
        gk_r = a1[..., :d] + b1[..., d:]
        gk_i = b1[..., :d] - a1[..., d:]
        res = [[gq[..., :d], gq[..., d:]], [gk_r, gk_i], [gv[..., :d], gv[..., d:]]]
        if use_rel:
            res += [[gpr.reshape(q.shape), gpi.reshape(q.shape)], [np.swapaxes(grel[..., ::-1], -1, -2).astype(rel.dtype)]]
        return res

    inputs = [q, k, v] + ([pq, rel] if use_rel else [])
    return track("complex_attention", out, inputs, backward)


def attention_weights(q: ComplexTensor, k: ComplexTensor) -> RealTensor:
    """softmax(|Q K^T| / sqrt(d_k)) composed from tape primitives."""
    kt = ct.permute(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    logits = ct.cmatmul(q, kt)
    return ct.softmax_lastdim(ct.magnitude(logits) * (1.0 / np.sqrt(q.shape[-1])))


def take_relative(rel: RealTensor, length: int) -> RealTensor:
    """Gathered copy of ``rel[h, i - j + L - 1, :]`` as a tape op, [H, L, L, d]."""
    view = relative_view(rel.data, length)
    out = RealTensor(np.array(view))
    return track("take_relative", out, [rel], lambda g: [[_diag_sums(g[0], length)]])


def attention_reference(q, k, v, pq=None, rel=None) -> ComplexTensor:
    """Unfused attention built only from tape primitives (oracle path)."""
    L, d = q.shape[-2], q.shape[-1]
    kt = ct.permute(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    logits = ct.cmatmul(q, kt)
    if rel is not None:
        rs = take_relative(rel, L)  # [H, L, L, d]
        # sum_d pq[..., h, i, d] * rs[h, i, j, d]
        pos_r = ct.rsum(ct.mul(ct.reshape(ct.real_part(pq), pq.shape[:-1] + (1, d)), rs), axis=-1)
        pos_i = ct.rsum(ct.mul(ct.reshape(ct.imag_part(pq), pq.shape[:-1] + (1, d)), rs), axis=-1)
        logits = logits + ct.make_complex(pos_r, pos_i)
    a = ct.softmax_lastdim(ct.magnitude(logits) * (1.0 / np.sqrt(d)))
    return ct.cmatmul(ct.make_complex(a, None), v)


class ComplexMultiHeadAttention(Module):
    """Complex MHSA over sequences [B', L, C] with relative positions."""

    def __init__(self, channels: int, heads: int = 4, relpos: bool = True,
                 rng: np.random.Generator | None = None):
        if channels % heads:
            raise DimensionError(f"{channels} channels not divisible by {heads} heads")
        rng = rng or np.random.default_rng(0)
        self.heads = heads
        self.d_k = channels // heads
        self.w_q = ComplexLinear(channels, channels, bias=False, rng=rng)
        self.w_k = ComplexLinear(channels, channels, bias=False, rng=rng)
        self.w_v = ComplexLinear(channels, channels, bias=False, rng=rng)
        self.w_o = ComplexLinear(channels, channels, rng=rng)
        self.relpos = relpos
        if relpos:
            dtype = ct.default_dtype()
            self.pos_proj = RealTensor((rng.standard_normal((channels, channels)) / np.sqrt(channels)).astype(dtype),
                                       requires_grad=True)
            self.pos_bias = complex_param((heads, 1, self.d_k), rng)

    def split_heads(self, z: ComplexTensor) -> ComplexTensor:
        b, L, c = z.shape
        return ct.permute(ct.reshape(z, (b, L, self.heads, self.d_k)), (0, 2, 1, 3))

    def merge_heads(self, z: ComplexTensor) -> ComplexTensor:
        b, h, L, d = z.shape
        return ct.reshape(ct.permute(z, (0, 2, 1, 3)), (b, L, h * d))

    def relative_table(self, length: int) -> RealTensor:
        table = RealTensor(sinusoid_table(length, self.heads * self.d_k, self.pos_proj.dtype))
        r = ct.matmul(table, self.pos_proj)
        r = ct.reshape(r, (2 * length - 1, self.heads, self.d_k))
        return ct.permute(r, (1, 0, 2))

    def qkv(self, z: ComplexTensor):
        if z.ndim != 3 or z.shape[-1] != self.heads * self.d_k:
            raise DimensionError(f"expected [B, L, {self.heads * self.d_k}] input, got {z.shape}")
        return self.split_heads(self.w_q(z)), self.split_heads(self.w_k(z)), self.split_heads(self.w_v(z))

    def forward(self, z: ComplexTensor) -> ComplexTensor:
        q, k, v = self.qkv(z)
        if self.relpos:
            o = complex_attention(q, k, v, q + self.pos_bias, self.relative_table(z.shape[1]))
        else:
            o = complex_attention(q, k, v)
        return self.w_o(self.merge_heads(o))
