"""D2Former assembly: dual-path encoder, conformer stack, two decoders, fusion.

Spectrogram tensors are [B, 1, T, F] complex; feature maps [B, C, T, F2].
"""
from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctensor as ct
from .conformer import ConformerStack
from .ctensor import ComplexTensor, DimensionError
from .layers import (CFSMN, ComplexConv2d, ComplexConvTranspose2d, ComplexInstanceNorm, ComplexPReLU, Module,
                     complex_leaky_relu, complex_tanh, transpose_output_size)
from .signal import StftConfig, istft_array, istft_tensor, stft_array


@dataclass
class D2FormerConfig:
    C: int = 32
    N: int = 3
    F: int = 201
    heads: int = 4
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    concat_blocks: int = 3
    alpha: float = 0.75
    beta: float = 0.25
    cfsmn_lookback: int = 8
    cfsmn_lookahead: int = 8
    in_kernel: tuple[int, int] = (3, 3)
    down_kernel: tuple[int, int] = (3, 3)
    dp_kernel: tuple[int, int] = (2, 3)
    up_kernel: tuple[int, int] = (1, 3)
    ffn_mult: int = 8
    conv_kernel: int = 7
    relpos: bool = True
    window_len: int = 400
    hop: int = 100
    fft_size: int = 400

    def __post_init__(self):
        self.dilations = tuple(self.dilations)
        for name in ("in_kernel", "down_kernel", "dp_kernel", "up_kernel"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.alpha < 0 or self.beta < 0:
            raise ct.ContractError(f"fusion weights must be non-negative (alpha={self.alpha}, beta={self.beta})")
        if self.F != self.fft_size // 2 + 1:
            raise ct.ContractError(f"F={self.F} does not match fft_size {self.fft_size}")

    @property
    def F2(self) -> int:
        return math.ceil(self.F / 2)

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_len, self.hop, self.fft_size)

    @classmethod
    def toy(cls, **overrides) -> "D2FormerConfig":
        """Desk-scale configuration: C=4, N=1, one attention head (d_k = C)."""
        return cls(**{"C": 4, "N": 1, "heads": 1, **overrides})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "D2FormerConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ct.ContractError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


class ConvModule2d(Module):
    """Complex conv -> complex instance norm -> complex PReLU."""

    def __init__(self, in_ch, out_ch, kernel, stride=(1, 1), padding=((0, 0), (0, 0)), dilation=(1, 1), rng=None):
        self.conv = ComplexConv2d(in_ch, out_ch, kernel, stride, dilation, padding, rng=rng)
        self.norm = ComplexInstanceNorm(out_ch)
        self.act = ComplexPReLU(out_ch)

    def forward(self, z):
        return self.act(self.norm(self.conv(z)))


class DPBlock(Module):
    """Zero padding + dilated conv module along time, then CFSMN along frequency.

    Time padding is causal (all before) so T is preserved.
    """

    def __init__(self, channels, dilation, kernel=(2, 3), lookback=8, lookahead=8, rng=None):
        kt, kf = kernel
        pad = ((dilation * (kt - 1), 0), (kf // 2, kf - 1 - kf // 2))
        self.conv = ConvModule2d(channels, channels, kernel, padding=pad, dilation=(dilation, 1), rng=rng)
        self.cfsmn = CFSMN(channels, lookback, lookahead, rng=rng)

    def forward(self, z):
        h = self.conv(z)
        h = self.cfsmn(ct.permute(h, (0, 2, 3, 1)))  # [B, T, F, C]
        return ct.permute(h, (0, 3, 1, 2))


class DilatedDualPath(Module):
    """Stack of DPBlocks; the first ``concat_blocks`` concatenate input and output
    on channels and re-project 2C -> C with a 1x1 complex conv."""

    def __init__(self, cfg: D2FormerConfig, rng=None):
        C = cfg.C
        self.blocks = [DPBlock(C, d, cfg.dp_kernel, cfg.cfsmn_lookback, cfg.cfsmn_lookahead, rng=rng)
                       for d in cfg.dilations]
        self.merge = [ComplexConv2d(2 * C, C, (1, 1), rng=rng)
                      for _ in range(min(cfg.concat_blocks, len(cfg.dilations)))]

    def forward(self, x):
        for i, blk in enumerate(self.blocks):
            y = blk(x)
            x = self.merge[i](ct.concat([x, y], axis=1)) if i < len(self.merge) else y
        return x


class Encoder(Module):
    def __init__(self, cfg: D2FormerConfig, rng=None):
        self.cfg = cfg
        kt, kf = cfg.in_kernel
        self.conv_in = ConvModule2d(1, cfg.C, cfg.in_kernel, padding=((kt // 2, kt // 2), (kf // 2, kf // 2)), rng=rng)
        self.dilated = DilatedDualPath(cfg, rng=rng)
        kt, kf = cfg.down_kernel
        self.conv_down = ConvModule2d(cfg.C, cfg.C, cfg.down_kernel, stride=(1, 2),
                                      padding=((kt // 2, kt // 2), (kf // 2, kf // 2)), rng=rng)

    def forward(self, Y: ComplexTensor) -> ComplexTensor:
        if Y.ndim != 4 or Y.shape[1] != 1 or Y.shape[3] != self.cfg.F:
            raise DimensionError(f"encoder expects [B, 1, T, {self.cfg.F}], got {Y.shape}")
        out = self.conv_down(self.dilated(self.conv_in(Y)))
        if out.shape[3] != self.cfg.F2:
            raise DimensionError(f"encoder produced {out.shape[3]} bins, expected {self.cfg.F2}")
        return out


def _upsampler(cfg: D2FormerConfig, rng) -> ComplexConvTranspose2d:
    kt, kf = cfg.up_kernel
    full = transpose_output_size(cfg.F2, kf, 2, (0, 0))
    trim = full - cfg.F
    if trim < 0:
        reachable = sorted({transpose_output_size(cfg.F2, kf, 2, (0, 0), 1, op) for op in (0, 1)})
        raise DimensionError(f"transposed conv (k_f={kf}, stride 2) cannot reach F={cfg.F} from "
                             f"{cfg.F2} bins; untrimmed sizes: {reachable}")
    return ComplexConvTranspose2d(cfg.C, cfg.C, cfg.up_kernel, stride=(1, 2),
                                  padding=((0, 0), (trim // 2, trim - trim // 2)), rng=rng)


class MaskingDecoder(Module):
    """Ends in tanh so both mask planes stay inside (-1, 1)."""

    def __init__(self, cfg: D2FormerConfig, rng=None):
        self.cfg = cfg
        self.dilated = DilatedDualPath(cfg, rng=rng)
        self.up = _upsampler(cfg, rng)
        self.squeeze = ComplexConv2d(cfg.C, 1, (1, 1), rng=rng)
        self.norm = ComplexInstanceNorm(1)
        self.out = ComplexConv2d(1, 1, (1, 1), rng=rng)

    def forward(self, feat):
        h = self.up(self.dilated(feat))
        if h.shape[3] != self.cfg.F:
            raise DimensionError(f"decoder restored {h.shape[3]} bins, expected {self.cfg.F}")
        h = complex_leaky_relu(self.norm(self.squeeze(h)))
        return complex_tanh(self.out(h))


class SpectralDecoder(Module):
    """No output activation: the estimate is unbounded."""

    def __init__(self, cfg: D2FormerConfig, rng=None):
        self.cfg = cfg
        self.dilated = DilatedDualPath(cfg, rng=rng)
        self.up = _upsampler(cfg, rng)
        self.act = ComplexPReLU(cfg.C)
        self.norm = ComplexInstanceNorm(cfg.C)
        self.squeeze = ComplexConv2d(cfg.C, 1, (1, 1), rng=rng)

    def forward(self, feat):
        h = self.up(self.dilated(feat))
        if h.shape[3] != self.cfg.F:
            raise DimensionError(f"decoder restored {h.shape[3]} bins, expected {self.cfg.F}")
        return self.squeeze(self.norm(self.act(h)))


def fuse(M: ComplexTensor, S_map: ComplexTensor, Y: ComplexTensor, alpha: float, beta: float) -> ComplexTensor:
    """alpha * (M (.) Y) + beta * S_map with elementwise complex product."""
    if not (M.shape == S_map.shape == Y.shape):
        raise DimensionError(f"fusion shapes differ: {M.shape}, {S_map.shape}, {Y.shape}")
    return ct.cmul_elementwise(M, Y) * float(alpha) + S_map * float(beta)


@dataclass
class Outputs:
    S_hat: ComplexTensor
    mask: ComplexTensor
    S_map: ComplexTensor


class D2Former(Module):
    def __init__(self, cfg: D2FormerConfig | None = None, seed: int = 0):
        self.cfg = cfg = cfg or D2FormerConfig()
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg, rng=rng)
        self.conformer = ConformerStack(cfg.C, cfg.N, cfg.heads, cfg.ffn_mult, cfg.conv_kernel, cfg.relpos, rng=rng)
        self.mask_decoder = MaskingDecoder(cfg, rng=rng)
        self.spec_decoder = SpectralDecoder(cfg, rng=rng)

    def forward(self, Y: ComplexTensor, alpha: float | None = None, beta: float | None = None) -> Outputs:
        """Noisy spectrogram [B, 1, T, F] -> fused estimate and both decoder outputs."""
        feat = self.conformer(self.encoder(Y))
        M = self.mask_decoder(feat)
        S_map = self.spec_decoder(feat)
        a = self.cfg.alpha if alpha is None else alpha
        b = self.cfg.beta if beta is None else beta
        return Outputs(fuse(M, S_map, Y, a, b), M, S_map)

    def spectrogram(self, y: np.ndarray) -> ComplexTensor:
        """Waveforms [B, L] -> [B, 1, T, F] complex input."""
        X = stft_array(y, self.cfg.stft)[:, None]
        dtype = self.parameters()[0].dtype
        return ComplexTensor(X.real.astype(dtype), X.imag.astype(dtype))

    def waveform(self, S: ComplexTensor, length: int):
        """Differentiable inverse of :meth:`spectrogram` -> RealTensor [B, length]."""
        return istft_tensor(ct.reshape(S, (S.shape[0],) + S.shape[2:]), self.cfg.stft, length)

    def enhance(self, y: np.ndarray, alpha: float | None = None, beta: float | None = None) -> np.ndarray:
        """Enhance waveforms [L] or [B, L] at the input's own level.

        Inputs are scaled to unit RMS before the model and the output is
        scaled back, so silence maps to silence.
        """
        y = np.asarray(y, dtype=np.float64)
        single = y.ndim == 1
        yb = np.atleast_2d(y)
        rms = np.sqrt(np.mean(yb ** 2, axis=-1, keepdims=True))
        safe = np.where(rms > 1e-8, rms, 1.0)
        with ct.no_grad():
            out = self.forward(self.spectrogram(yb / safe), alpha, beta)
        S = out.S_hat.re[:, 0] + 1j * out.S_hat.im[:, 0]
        s = istft_array(S, self.cfg.stft, yb.shape[-1]) * np.where(rms > 1e-8, rms, 0.0)
        return s[0] if single else s


def param_breakdown(model: D2Former) -> dict[str, int]:
    return {name: getattr(model, name).num_params()
            for name in ("encoder", "conformer", "mask_decoder", "spec_decoder")}


def count_params(cfg: D2FormerConfig | D2Former) -> int:
    """Real scalars in the model, real and imaginary planes counted separately."""
    model = cfg if isinstance(cfg, D2Former) else D2Former(cfg)
    return model.num_params()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"D2FM"
VERSION = 1
_PLANE_TAGS = {0: "re", 1: "im", 2: "real"}


class CheckpointError(ValueError):
    pass


class CheckpointParseError(CheckpointError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointIncompatible(CheckpointError):
    pass


def checkpoint_bytes(model: D2Former) -> bytes:
    buf = io.BytesIO()
    cfg = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    buf.write(MAGIC + struct.pack("<II", VERSION, len(cfg)) + cfg)
    entries = []
    for name, p in model.named_parameters():
        tags = (0, 1) if p.is_complex else (2,)
        entries += [(name, tag, plane) for tag, plane in zip(tags, p.planes)]
    buf.write(struct.pack("<I", len(entries)))
    for name, tag, plane in entries:
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", tag, plane.ndim))
        buf.write(struct.pack(f"<{plane.ndim}I", *plane.shape))
        payload = np.ascontiguousarray(plane, dtype="<f4").tobytes()
        buf.write(struct.pack("<Q", len(payload)) + payload)
    return buf.getvalue()


def save_checkpoint(model: D2Former, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointParseError(f"truncated while reading {what}", self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path) -> tuple[D2FormerConfig, dict[str, dict[str, np.ndarray]]]:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointIncompatible(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, clen = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointIncompatible(f"checkpoint format version {version}, this build reads {VERSION}")
    at = r.pos
    try:
        cfg = D2FormerConfig.from_dict(json.loads(r.take(clen, "config record")))
    except (ValueError, TypeError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointParseError(f"invalid config record: {e}", at) from e
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "tensor name").decode()
        tag, ndim = r.unpack("<BB", "tensor header")
        if tag not in _PLANE_TAGS:
            raise CheckpointParseError(f"unknown plane tag {tag} for {name}", r.pos - 2)
        shape = r.unpack(f"<{ndim}I", "tensor shape")
        (nbytes,) = r.unpack("<Q", "payload length")
        expected = 4 * int(np.prod(shape))
        if nbytes != expected:
            raise CheckpointParseError(f"payload of {name} is {nbytes} bytes, shape {shape} needs {expected}",
                                       r.pos - 8)
        data = np.frombuffer(r.take(nbytes, f"payload of {name}"), dtype="<f4").reshape(shape)
        tensors.setdefault(name, {})[_PLANE_TAGS[tag]] = data.astype(np.float32)
    if r.pos != len(r.raw):
        raise CheckpointParseError("trailing bytes after last tensor", r.pos)
    return cfg, tensors


def _check_config(found: D2FormerConfig, expected: D2FormerConfig) -> None:
    a, b = found.to_dict(), expected.to_dict()
    diffs = [f"{k}: checkpoint has {a[k]}, expected {b[k]}" for k in a if a[k] != b[k]
             and k not in ("alpha", "beta")]
    if diffs:
        raise CheckpointIncompatible("config mismatch: " + "; ".join(diffs))


def load_checkpoint(path, expect: D2FormerConfig | None = None) -> D2Former:
    cfg, tensors = read_checkpoint(path)
    if expect is not None:
        _check_config(cfg, expect)
    model = D2Former(cfg)
    load_parameters(model, tensors)
    return model


def load_parameters(model: D2Former, tensors: dict[str, dict[str, np.ndarray]]) -> None:
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise CheckpointIncompatible(f"parameter names differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in params.items():
        planes = tensors[name]
        if p.is_complex:
            re, im = planes.get("re"), planes.get("im")
            if re is None or im is None or re.shape != p.shape or im.shape != p.shape:
                raise CheckpointIncompatible(f"{name}: expected complex {p.shape}")
            p.re, p.im = re.copy(), im.copy()
        else:
            x = planes.get("real")
            if x is None or x.shape != p.shape:
                raise CheckpointIncompatible(f"{name}: expected real {p.shape}")
            p.data = x.copy()
