"""Complex conformer blocks and the dual-path time/frequency arrangement."""
from __future__ import annotations

import numpy as np

from . import ctensor as ct
from .attention import ComplexMultiHeadAttention
from .ctensor import ComplexTensor
from .layers import ComplexInstanceNorm, ComplexLinear, Module, complex_param, fsmn_memory


def _seq_norm(channels: int) -> ComplexInstanceNorm:
    # sequences are [B', L, C]: normalize over L per (instance, channel)
    return ComplexInstanceNorm(channels, axes=(1,), channel_axis=2)


class FeedForward(Module):
    def __init__(self, channels: int, mult: int = 4, rng=None):
        self.norm = _seq_norm(channels)
        self.up = ComplexLinear(channels, mult * channels, rng=rng)
        self.down = ComplexLinear(mult * channels, channels, rng=rng)

    def forward(self, z):
        return self.down(ct.swish(self.up(self.norm(z))))


class ConvModule(Module):
    """Pointwise gate -> depthwise conv over the sequence -> norm -> swish -> pointwise.

    The gate is the real sigmoid of the gate half's magnitude, so it scales
    the content half without rotating its phase.
    """

    def __init__(self, channels: int, kernel: int = 7, rng=None):
        rng = rng or np.random.default_rng(0)
        self.norm = _seq_norm(channels)
        self.pw_in = ComplexLinear(channels, 2 * channels, rng=rng)
        self.dw_taps = complex_param((channels, kernel), rng, std=1.0 / np.sqrt(2 * kernel))
        self.dw_bias = complex_param((channels,), rng)
        self.dw_norm = _seq_norm(channels)
        self.pw_out = ComplexLinear(channels, channels, rng=rng)
        self.kernel = kernel

    def forward(self, z):
        h = self.pw_in(self.norm(z))
        content, gate = ct.split(h, 2, axis=-1)
        h = ct.mul(ct.sigmoid(ct.magnitude(gate)), content)
        h = fsmn_memory(h, self.dw_taps, self.kernel // 2) + self.dw_bias
        return self.pw_out(ct.swish(self.dw_norm(h)))


class MHSAModule(Module):
    def __init__(self, channels: int, heads: int = 4, relpos: bool = True, rng=None):
        self.norm = _seq_norm(channels)
        self.attn = ComplexMultiHeadAttention(channels, heads, relpos=relpos, rng=rng)

    def forward(self, z):
        return self.attn(self.norm(z))


class ComplexConformer(Module):
    """Half-step FFN, MHSA, conv module, half-step FFN, all residual."""

    def __init__(self, channels: int, heads: int = 4, ffn_mult: int = 4, conv_kernel: int = 7,
                 relpos: bool = True, rng=None):
        rng = rng or np.random.default_rng(0)
        self.ffn1 = FeedForward(channels, ffn_mult, rng=rng)
        self.mhsa = MHSAModule(channels, heads, relpos=relpos, rng=rng)
        self.conv = ConvModule(channels, conv_kernel, rng=rng)
        self.ffn2 = FeedForward(channels, ffn_mult, rng=rng)

    def forward(self, z: ComplexTensor) -> ComplexTensor:
        z = z + 0.5 * self.ffn1(z)
        z = z + self.mhsa(z)
        z = z + self.conv(z)
        return z + 0.5 * self.ffn2(z)


def to_time_view(x: ComplexTensor) -> ComplexTensor:
    """[B, C, T, F] -> [B*F, T, C]."""
    b, c, t, f = x.shape
    return ct.reshape(ct.permute(x, (0, 3, 2, 1)), (b * f, t, c))


def from_time_view(z: ComplexTensor, shape) -> ComplexTensor:
    b, c, t, f = shape
    return ct.permute(ct.reshape(z, (b, f, t, c)), (0, 3, 2, 1))


def to_freq_view(x: ComplexTensor) -> ComplexTensor:
    """[B, C, T, F] -> [B*T, F, C]."""
    b, c, t, f = x.shape
    return ct.reshape(ct.permute(x, (0, 2, 3, 1)), (b * t, f, c))


def from_freq_view(z: ComplexTensor, shape) -> ComplexTensor:
    b, c, t, f = shape
    return ct.permute(ct.reshape(z, (b, t, f, c)), (0, 3, 1, 2))


def dual_path_block(x: ComplexTensor, time_cf, freq_cf) -> ComplexTensor:
    """Time conformer on every frequency bin, then frequency conformer on every frame."""
    shape = x.shape
    x = from_time_view(time_cf(to_time_view(x)), shape)
    return from_freq_view(freq_cf(to_freq_view(x)), shape)


class DualPathConformer(Module):
    def __init__(self, channels: int, heads: int = 4, ffn_mult: int = 4, conv_kernel: int = 7,
                 relpos: bool = True, rng=None):
        rng = rng or np.random.default_rng(0)
        self.time = ComplexConformer(channels, heads, ffn_mult, conv_kernel, relpos, rng=rng)
        self.freq = ComplexConformer(channels, heads, ffn_mult, conv_kernel, relpos, rng=rng)

    def forward(self, x):
        return dual_path_block(x, self.time, self.freq)


class ConformerStack(Module):
    def __init__(self, channels: int, blocks: int, heads: int = 4, ffn_mult: int = 4,
                 conv_kernel: int = 7, relpos: bool = True, rng=None):
        if blocks < 1:
            raise ct.ContractError("conformer stack needs at least one block")
        rng = rng or np.random.default_rng(0)
        self.blocks = [DualPathConformer(channels, heads, ffn_mult, conv_kernel, relpos, rng=rng)
                       for _ in range(blocks)]

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x
