"""Complex-valued layers.

Parameterized layers follow the paired-sublayer rule

    H(Z) = [H_R(Z_R) - H_I(Z_I)] + j[H_R(Z_I) + H_I(Z_R)]

and parameterless ops act on the real and imaginary planes separately.
Feature maps are laid out ``[batch, channel, time, freq]``.
"""
from __future__ import annotations

from typing import Callable, Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from . import ctensor as ct
from .ctensor import ComplexTensor, DimensionError, Node, RealTensor, track


class Module:
    """Minimal parameter container; attributes are scanned for parameters."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Node]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Node) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Node) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Node]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size * len(p.planes) for p in self.parameters())

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            if p.is_complex:
                p.re, p.im = p.re.astype(dtype), p.im.astype(dtype)
            else:
                p.data = p.data.astype(dtype)
        return self


def complex_param(shape, rng: np.random.Generator, std: float = 0.0) -> ComplexTensor:
    dtype = ct.default_dtype()
    if std == 0.0:
        re, im = np.zeros(shape, dtype), np.zeros(shape, dtype)
    else:
        re = (rng.standard_normal(shape) * std).astype(dtype)
        im = (rng.standard_normal(shape) * std).astype(dtype)
    return ComplexTensor(re, im, requires_grad=True)


def real_param(values) -> RealTensor:
    return RealTensor(np.array(values, dtype=ct.default_dtype()), requires_grad=True)


def complex_apply(h_r: Callable[[RealTensor], RealTensor], h_i: Callable[[RealTensor], RealTensor],
                  z: ComplexTensor) -> ComplexTensor:
    """Combine two structurally identical real operators into a complex one."""
    zr, zi = ct.real_part(z), ct.imag_part(z)
    rr, ii, ri, ir = h_r(zr), h_i(zi), h_r(zi), h_i(zr)
    if rr.shape != ii.shape:
        raise DimensionError(f"real/imag sublayers disagree: {rr.shape} vs {ii.shape}")
    return ct.make_complex(rr - ii, ri + ir)


# ---------------------------------------------------------------------------
# real convolution kernels (numpy), kernel-offset loop form
# ---------------------------------------------------------------------------


def conv_output_size(n: int, k: int, stride: int, dilation: int) -> int:
    return (n - dilation * (k - 1) - 1) // stride + 1


# im2col columns up to this size are kept from the forward pass for the weight gradient
COL_CACHE_BYTES = 128 * 2**20


def _check_conv(x_shape, w_shape, stride, dilation) -> tuple[int, int]:
    _, Ci, H, W = x_shape
    _, Ci2, kh, kw = w_shape
    if Ci != Ci2:
        raise DimensionError(f"input has {Ci} channels, kernel expects {Ci2}")
    oh = conv_output_size(H, kh, stride[0], dilation[0])
    ow = conv_output_size(W, kw, stride[1], dilation[1])
    if oh < 1 or ow < 1:
        raise DimensionError(f"input {H}x{W} too small for kernel {kh}x{kw} with dilation {dilation}")
    return oh, ow


def im2col(x: np.ndarray, kernel, stride=(1, 1), dilation=(1, 1)) -> np.ndarray:
    """Patches of x [B,Ci,H,W] as rows [B*oh*ow, Ci*kh*kw] (channel-major within a row)."""
    B, Ci = x.shape[:2]
    kh, kw = kernel
    oh, ow = _check_conv(x.shape, (0, Ci, kh, kw), stride, dilation)
    if kh == kw == 1:
        xt = np.moveaxis(x[:, :, ::stride[0], ::stride[1]], 1, -1)
        return np.ascontiguousarray(xt).reshape(B * oh * ow, Ci)
    span = ((kh - 1) * dilation[0] + 1, (kw - 1) * dilation[1] + 1)
    v = sliding_window_view(x, span, axis=(2, 3))
    v = v[:, :, ::stride[0], ::stride[1], ::dilation[0], ::dilation[1]][:, :, :oh, :ow]
    return np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(B * oh * ow, Ci * kh * kw)


def conv2d_real(x: np.ndarray, w: np.ndarray, stride=(1, 1), dilation=(1, 1),
                cols: np.ndarray | None = None) -> np.ndarray:
    """Valid cross-correlation: x [B,Ci,H,W], w [Co,Ci,kh,kw] -> [B,Co,H',W']."""
    oh, ow = _check_conv(x.shape, w.shape, stride, dilation)
    Co = w.shape[0]
    if cols is None:
        cols = im2col(x, w.shape[2:], stride, dilation)
    out = (cols @ w.reshape(Co, -1).T).reshape(x.shape[0], oh, ow, Co)
    return np.moveaxis(out, -1, 1)


def conv2d_grad_input(g: np.ndarray, w: np.ndarray, x_shape, stride=(1, 1), dilation=(1, 1)) -> np.ndarray:
    """Adjoint of :func:`conv2d_real` in ``x``: zero-stuff, pad, correlate with the flipped kernel."""
    B, Ci, H, W = x_shape
    _, _, kh, kw = w.shape
    oh, ow = g.shape[2], g.shape[3]
    if kh == kw == 1 and stride == (1, 1) and (oh, ow) == (H, W):
        return np.moveaxis(np.moveaxis(g, 1, -1) @ w[:, :, 0, 0], -1, 1)
    sh, sw = stride
    if (sh, sw) != (1, 1):
        gs = np.zeros(g.shape[:2] + ((oh - 1) * sh + 1, (ow - 1) * sw + 1), dtype=g.dtype)
        gs[:, :, ::sh, ::sw] = g
    else:
        gs = g
    ph, pw = dilation[0] * (kh - 1), dilation[1] * (kw - 1)
    extra_h, extra_w = H - (gs.shape[2] + ph), W - (gs.shape[3] + pw)
    gp = np.pad(gs, ((0, 0), (0, 0), (ph, ph + extra_h), (pw, pw + extra_w)))
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_real(gp, wf, (1, 1), dilation)


def conv2d_grad_weight(g: np.ndarray, x: np.ndarray, w_shape, stride=(1, 1), dilation=(1, 1),
                       cols: np.ndarray | None = None) -> np.ndarray:
    if cols is None:
        cols = im2col(x, w_shape[2:], stride, dilation)
    g2 = np.moveaxis(g, 1, -1).reshape(-1, w_shape[0])
    return (g2.T @ cols).reshape(w_shape)


def _block_weight(w: ComplexTensor, conj: bool = False) -> np.ndarray:
    # [[W_R, -W_I], [W_I, W_R]] maps stacked [re; im] channels to [re; im];
    # the transposed conv uses the conjugate block so that its adjoint keeps that form
    wi = -w.im if conj else w.im
    top = np.concatenate([w.re, -wi], axis=1)
    bot = np.concatenate([wi, w.re], axis=1)
    return np.concatenate([top, bot], axis=0)


def _split_block_grad(gw: np.ndarray, co: int, ci: int, conj: bool = False) -> list[np.ndarray]:
    g_re = gw[:co, :ci] + gw[co:, ci:]
    g_im = gw[co:, :ci] - gw[:co, ci:]
    return [g_re, -g_im if conj else g_im]


def complex_conv2d(z: ComplexTensor, w: ComplexTensor, b: ComplexTensor | None,
                   stride=(1, 1), dilation=(1, 1), padding=((0, 0), (0, 0))) -> ComplexTensor:
    """Complex 2-D convolution with zero constant padding.

    ``padding`` is ((top, bottom), (left, right)) on the (time, freq) axes.
    The four real convolutions are evaluated as one real convolution over
    stacked planes with the block kernel [[W_R, -W_I], [W_I, W_R]].
    """
    if z.ndim != 4:
        raise DimensionError(f"expected [B,C,T,F] input, got shape {z.shape}")
    co, ci = w.shape[0], w.shape[1]
    if z.shape[1] != ci:
        raise DimensionError(f"input has {z.shape[1]} channels, kernel expects {ci}")
    pw = ((0, 0), (0, 0)) + tuple(tuple(p) for p in padding)
    x = np.concatenate([np.pad(z.re, pw), np.pad(z.im, pw)], axis=1)
    wb = _block_weight(w)
    cols = im2col(x, wb.shape[2:], stride, dilation)
    y = conv2d_real(x, wb, stride, dilation, cols=cols)
    if cols.nbytes > COL_CACHE_BYTES:
        cols = None
    re, im = y[:, :co], y[:, co:]
    if b is not None:
        re = re + b.re[None, :, None, None]
        im = im + b.im[None, :, None, None]
    out = ComplexTensor(np.ascontiguousarray(re), np.ascontiguousarray(im))
    H, W = z.shape[2], z.shape[3]

    def backward(g):
        gy = np.concatenate(g, axis=1)
        gx = conv2d_grad_input(gy, wb, x.shape, stride, dilation)
        gx = gx[:, :, pw[2][0]:pw[2][0] + H, pw[3][0]:pw[3][0] + W]
        res = [[gx[:, :ci], gx[:, ci:]], _split_block_grad(conv2d_grad_weight(gy, x, wb.shape, stride, dilation, cols), co, ci)]
        if b is not None:
            res.append([g[0].sum(axis=(0, 2, 3)), g[1].sum(axis=(0, 2, 3))])
        return res

    inputs = [z, w] + ([b] if b is not None else [])
    return track("complex_conv2d", out, inputs, backward)


def transpose_output_size(n: int, k: int, stride: int, pad: tuple[int, int], dilation: int = 1,
                          output_padding: int = 0) -> int:
    return (n - 1) * stride + dilation * (k - 1) + 1 + output_padding - pad[0] - pad[1]


def complex_conv_transpose2d(z: ComplexTensor, w: ComplexTensor, b: ComplexTensor | None,
                             stride=(1, 1), dilation=(1, 1), padding=((0, 0), (0, 0)),
                             output_padding=(0, 0)) -> ComplexTensor:
    """Adjoint of :func:`complex_conv2d` in the input; ``w`` is [C_in, C_out, kt, kf].

    ``padding`` trims (before, after) samples from the full output.
    """
    if z.ndim != 4:
        raise DimensionError(f"expected [B,C,T,F] input, got shape {z.shape}")
    ci, co, kh, kw = w.shape
    if z.shape[1] != ci:
        raise DimensionError(f"input has {z.shape[1]} channels, kernel expects {ci}")
    B, _, H, W = z.shape
    hf = (H - 1) * stride[0] + dilation[0] * (kh - 1) + 1 + output_padding[0]
    wf = (W - 1) * stride[1] + dilation[1] * (kw - 1) + 1 + output_padding[1]
    (pt0, pt1), (pf0, pf1) = padding
    if hf - pt0 - pt1 < 1 or wf - pf0 - pf1 < 1:
        raise DimensionError(f"transposed conv output would be empty ({hf}x{wf} before trimming)")
    # block kernel viewed as a conv from the output space (2*co) to the input space (2*ci)
    wb = _block_weight(w, conj=True)
    x = np.concatenate([z.re, z.im], axis=1)
    full = conv2d_grad_input(x, wb, (B, 2 * co, hf, wf), stride, dilation)
    full = full[:, :, pt0:hf - pt1, pf0:wf - pf1]
    re, im = full[:, :co], full[:, co:]
    if b is not None:
        re = re + b.re[None, :, None, None]
        im = im + b.im[None, :, None, None]
    out = ComplexTensor(np.ascontiguousarray(re), np.ascontiguousarray(im))

    def backward(g):
        gy = np.zeros((B, 2 * co, hf, wf), dtype=g[0].dtype)
        gy[:, :co, pt0:hf - pt1, pf0:wf - pf1] = g[0]
        gy[:, co:, pt0:hf - pt1, pf0:wf - pf1] = g[1]
        gx = conv2d_real(gy, wb, stride, dilation)
        # d<x, conv(gy)>/dW: weight gradient of the conv gy -> x
        gwb = conv2d_grad_weight(x, gy, wb.shape, stride, dilation)
        res = [[gx[:, :ci], gx[:, ci:]], _split_block_grad(gwb, ci, co, conj=True)]
        if b is not None:
            res.append([g[0].sum(axis=(0, 2, 3)), g[1].sum(axis=(0, 2, 3))])
        return res

    inputs = [z, w] + ([b] if b is not None else [])
    return track("complex_conv_transpose2d", out, inputs, backward)


# ---------------------------------------------------------------------------
# normalization and activations
# ---------------------------------------------------------------------------


def standardize_planes(z: ComplexTensor, axes: tuple[int, ...], eps: float = 1e-5) -> ComplexTensor:
    """Zero-mean, unit-variance per plane over ``axes`` (real and imag separately)."""
    n = int(np.prod([z.shape[a] for a in axes]))
    outs, inv_stds = [], []
    for p in z.planes:
        mu = p.mean(axis=axes, keepdims=True)
        xc = p - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
        outs.append(xc * inv)
        inv_stds.append(inv)
    out = ComplexTensor(*outs)

    def backward(g):
        res = []
        for gp, xh, inv in zip(g, outs, inv_stds):
            gm = gp.sum(axis=axes, keepdims=True) / n
            gxm = (gp * xh).sum(axis=axes, keepdims=True) / n
            res.append((gp - gm - xh * gxm) * inv)
        return [res]

    return track("standardize", out, [z], backward)


def _channel_view(p: Node, ndim: int, axis: int) -> Node:
    shape = [1] * ndim
    shape[axis] = p.shape[0]
    return ct.reshape(p, shape)


def instance_norm(z: ComplexTensor, gamma: ComplexTensor, beta: ComplexTensor, axes=(2, 3),
                  channel_axis: int = 1, eps: float = 1e-5) -> ComplexTensor:
    """gamma * standardize(z) + beta, fused; ``axes`` must be contiguous.

    Each plane is standardized separately per instance and channel; gamma and
    beta are complex per-channel vectors applied with complex arithmetic.
    """
    axes = tuple(sorted(a % z.ndim for a in axes))
    channel_axis %= z.ndim
    if axes != tuple(range(axes[0], axes[-1] + 1)) or axes[0] <= channel_axis <= axes[-1]:
        raise DimensionError(f"norm axes {axes} must be contiguous and exclude channel axis {channel_axis}")
    shape = z.shape
    A = int(np.prod(shape[:axes[0]]))
    N = int(np.prod(shape[axes[0]:axes[-1] + 1]))
    D = int(np.prod(shape[axes[-1] + 1:]))
    outer = shape[:axes[0]] + shape[axes[-1] + 1:]
    c_outer = channel_axis if channel_axis < axes[0] else channel_axis - len(axes)
    cshape = [1] * len(outer)
    cshape[c_outer] = shape[channel_axis]

    def per_row(v):
        return np.ascontiguousarray(np.broadcast_to(v.reshape(cshape), outer)).reshape(A, D)

    view = (A, N, D)
    xr = np.ascontiguousarray(z.re).reshape(view)
    xi = np.ascontiguousarray(z.im).reshape(view)
    g_r, g_i, b_r, b_i = (per_row(v) for v in (gamma.re, gamma.im, beta.re, beta.im))
    out_r, out_i = np.empty_like(xr), np.empty_like(xi)
    mean = np.empty((A, D, 2))
    inv = np.empty((A, D, 2))
    _kernels.inorm_forward(xr, xi, g_r, g_i, b_r, b_i, eps, out_r, out_i, mean, inv)
    out = ComplexTensor(out_r.reshape(shape), out_i.reshape(shape))
    red = tuple(i for i in range(len(outer)) if i != c_outer)

    def backward(g):
        Gr = np.ascontiguousarray(g[0]).reshape(view)
        Gi = np.ascontiguousarray(g[1]).reshape(view)
        dxr, dxi = np.empty_like(xr), np.empty_like(xi)
        dg = np.zeros((A, D, 2))
        db = np.zeros((A, D, 2))
        _kernels.inorm_backward(Gr, Gi, xr, xi, g_r, g_i, mean, inv, dxr, dxi, dg, db)

        def to_channels(acc, k):
            return acc[..., k].reshape(outer).sum(axis=red).astype(gamma.dtype)

        return [[dxr.reshape(shape), dxi.reshape(shape)],
                [to_channels(dg, 0), to_channels(dg, 1)],
                [to_channels(db, 0), to_channels(db, 1)]]

    return track("instance_norm", out, [z, gamma, beta], backward)


def instance_norm_reference(z, gamma, beta, axes=(2, 3), channel_axis: int = 1, eps: float = 1e-5):
    """Unfused composition of :func:`standardize_planes` and the complex affine."""
    zn = standardize_planes(z, axes, eps)
    return ct.cmul_elementwise(zn, _channel_view(gamma, z.ndim, channel_axis)) + \
        _channel_view(beta, z.ndim, channel_axis)


class ComplexInstanceNorm(Module):
    """Per-instance, per-channel plane standardization with complex affine.

    ``axes`` are the normalized axes and ``channel_axis`` locates C; the
    defaults suit [B,C,T,F] maps, sequence models use axes=(1,), channel_axis=2.
    """

    def __init__(self, channels: int, axes=(2, 3), channel_axis: int = 1, eps: float = 1e-5):
        dtype = ct.default_dtype()
        self.gamma = ComplexTensor(np.ones(channels, dtype), np.zeros(channels, dtype), requires_grad=True)
        self.beta = ComplexTensor(np.zeros(channels, dtype), np.zeros(channels, dtype), requires_grad=True)
        self.axes = tuple(axes)
        self.channel_axis = channel_axis
        self.eps = eps

    def forward(self, z: ComplexTensor) -> ComplexTensor:
        return instance_norm(z, self.gamma, self.beta, self.axes, self.channel_axis, self.eps)


def prelu(z: ComplexTensor, slope: RealTensor, channel_axis: int = 1) -> ComplexTensor:
    """PReLU on each plane with one learnable real slope per channel."""
    shape = [1] * z.ndim
    shape[channel_axis] = slope.shape[0]
    a = slope.data.reshape(shape)
    outs = [np.where(p > 0, p, a * p) for p in z.planes]
    out = ComplexTensor(*outs)
    red = tuple(i for i in range(z.ndim) if i != channel_axis)

    def backward(g):
        gz = [gp * np.where(p > 0, 1.0, a).astype(gp.dtype) for gp, p in zip(g, z.planes)]
        ga = sum((gp * np.minimum(p, 0)).sum(axis=red) for gp, p in zip(g, z.planes))
        return [gz, [ga]]

    return track("prelu", out, [z, slope], backward)


class ComplexPReLU(Module):
    def __init__(self, channels: int, init: float = 0.25, channel_axis: int = 1):
        self.slope = real_param(np.full(channels, init))
        self.channel_axis = channel_axis

    def forward(self, z):
        return prelu(z, self.slope, self.channel_axis)


def complex_leaky_relu(z: ComplexTensor, slope: float = 0.01) -> ComplexTensor:
    return ct.leaky_relu(z, slope)


def complex_tanh(z: ComplexTensor) -> ComplexTensor:
    return ct.tanh(z)


# ---------------------------------------------------------------------------
# parameterized layers
# ---------------------------------------------------------------------------


class ComplexConv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel=(1, 1), stride=(1, 1), dilation=(1, 1),
                 padding=((0, 0), (0, 0)), bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel[0] * kernel[1]
        self.weight = complex_param((out_ch, in_ch, *kernel), rng, std=1.0 / np.sqrt(2 * fan_in))
        self.bias = complex_param((out_ch,), rng) if bias else None
        self.stride = tuple(stride)
        self.dilation = tuple(dilation)
        self.padding = tuple(tuple(p) for p in padding)

    def forward(self, z):
        return complex_conv2d(z, self.weight, self.bias, self.stride, self.dilation, self.padding)


class ComplexConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel=(1, 1), stride=(1, 1), dilation=(1, 1),
                 padding=((0, 0), (0, 0)), output_padding=(0, 0), bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel[0] * kernel[1]
        self.weight = complex_param((in_ch, out_ch, *kernel), rng, std=1.0 / np.sqrt(2 * fan_in))
        self.bias = complex_param((out_ch,), rng) if bias else None
        self.stride = tuple(stride)
        self.dilation = tuple(dilation)
        self.padding = tuple(tuple(p) for p in padding)
        self.output_padding = tuple(output_padding)

    def output_size(self, t: int, f: int) -> tuple[int, int]:
        k = self.weight.shape[2:]
        return tuple(transpose_output_size(n, k[i], self.stride[i], self.padding[i], self.dilation[i],
                                           self.output_padding[i]) for i, n in enumerate((t, f)))

    def forward(self, z):
        return complex_conv_transpose2d(z, self.weight, self.bias, self.stride, self.dilation,
                                        self.padding, self.output_padding)


class ComplexLinear(Module):
    """y = x W + b over the last axis, with complex W via four real products."""

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = complex_param((in_dim, out_dim), rng, std=1.0 / np.sqrt(2 * in_dim))
        self.bias = complex_param((out_dim,), rng) if bias else None

    def forward(self, z):
        if z.shape[-1] != self.weight.shape[0]:
            raise DimensionError(f"last axis {z.shape[-1]} != linear input {self.weight.shape[0]}")
        y = ct.cmatmul(z, self.weight)
        return y + self.bias if self.bias is not None else y


def fsmn_memory(g: ComplexTensor, taps: ComplexTensor, lookback: int) -> ComplexTensor:
    """sum_k taps[c, k] * g[..., f + k - lookback, c], zero outside [0, F).

    ``g`` is [..., F, C]; ``taps`` is [C, K].
    """
    C, K = taps.shape
    if g.shape[-1] != C:
        raise DimensionError(f"memory taps cover {C} channels, input has {g.shape[-1]}")
    F = g.shape[-2]
    flat = (-1, F, C)
    gr = np.ascontiguousarray(g.re).reshape(flat)
    gi = np.ascontiguousarray(g.im).reshape(flat)
    tr, ti = np.ascontiguousarray(taps.re), np.ascontiguousarray(taps.im)
    re, im = np.empty_like(gr), np.empty_like(gi)
    _kernels.fir_forward(gr, gi, tr, ti, lookback, re, im)
    out = ComplexTensor(re.reshape(g.shape), im.reshape(g.shape))

    def backward(grad):
        Gr = np.ascontiguousarray(grad[0]).reshape(flat)
        Gi = np.ascontiguousarray(grad[1]).reshape(flat)
        dgr, dgi = np.empty_like(gr), np.empty_like(gi)
        dtr, dti = np.empty_like(tr), np.empty_like(ti)
        _kernels.fir_backward(Gr, Gi, gr, gi, tr, ti, lookback, dgr, dgi, dtr, dti)
        return [[dgr.reshape(g.shape), dgi.reshape(g.shape)], [dtr, dti]]

    return track("fsmn_memory", out, [g, taps], backward)


class CFSMN(Module):
    """Complex FSMN memory block over the frequency axis, input [B,T,F,C].

    out = h + sum_{tau=-lookback..lookahead} taps[tau] * (h W + b)[f + tau]
    """

    def __init__(self, channels: int, lookback: int = 8, lookahead: int = 8,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.proj = ComplexLinear(channels, channels, rng=rng)
        k = lookback + lookahead + 1
        self.taps = complex_param((channels, k), rng, std=1.0 / np.sqrt(2 * k))
        self.lookback = lookback

    def forward(self, h: ComplexTensor) -> ComplexTensor:
        return h + fsmn_memory(self.proj(h), self.taps, self.lookback)
