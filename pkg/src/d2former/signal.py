"""Waveform/spectrogram conversion, WAV I/O and noisy-mixture synthesis.

Framing is centered with reflection padding and ``T = ceil(len / hop)``
frames; synthesis is weighted overlap-add normalized by the summed squared
window, which reconstructs exactly even though Hamming at 25% hop is not COLA.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctensor as ct
from .ctensor import ComplexTensor, ContractError, RealTensor, track

SAMPLE_RATE = 16000


def hamming(n: int) -> np.ndarray:
    """Periodic Hamming window 0.54 - 0.46 cos(2 pi k / n)."""
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 400
    hop: int = 100
    fft_size: int = 400

    def __post_init__(self):
        if self.hop > self.window_len:
            raise ContractError(f"hop {self.hop} exceeds window length {self.window_len}")
        if self.fft_size < self.window_len:
            raise ContractError(f"fft size {self.fft_size} shorter than window {self.window_len}")

    @property
    def window(self) -> np.ndarray:
        return hamming(self.window_len)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, length: int) -> int:
        return -(-length // self.hop)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self):
        return len(self.samples)


@dataclass
class Spectrogram:
    data: ComplexTensor  # [T, F]
    frame_hop: int = 100
    fft_size: int = 400

    @property
    def shape(self):
        return self.data.shape


def _samples(w) -> np.ndarray:
    return np.asarray(w.samples if isinstance(w, Waveform) else w)


# ---------------------------------------------------------------------------
# STFT / ISTFT
# ---------------------------------------------------------------------------


def stft_array(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex STFT of real signals [..., L] -> [..., T, F]."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 1:
        raise ContractError("cannot transform an empty waveform")
    T = cfg.n_frames(n)
    left = cfg.window_len // 2
    right = (T - 1) * cfg.hop + cfg.window_len - left - n
    widths = [(0, 0)] * (x.ndim - 1) + [(left, max(right, 0))]
    xp = np.pad(x, widths, mode="reflect") if n > 1 else np.pad(x, widths, mode="edge")
    idx = np.arange(T)[:, None] * cfg.hop + np.arange(cfg.window_len)[None, :]
    frames = xp[..., idx] * cfg.window
    return np.fft.rfft(frames, n=cfg.fft_size, axis=-1)


def stft(w, cfg: StftConfig = StftConfig()) -> Spectrogram:
    spec = stft_array(_samples(w), cfg)
    return Spectrogram(ComplexTensor(spec.real.astype(ct.default_dtype()), spec.imag.astype(ct.default_dtype())),
                       cfg.hop, cfg.fft_size)


def _ola_norm(T: int, cfg: StftConfig) -> np.ndarray:
    w2 = cfg.window ** 2
    norm = np.zeros((T - 1) * cfg.hop + cfg.window_len)
    for t in range(T):
        norm[t * cfg.hop:t * cfg.hop + cfg.window_len] += w2
    return norm


def _synthesis_plan(T: int, cfg: StftConfig, out_len: int):
    """Normalizer over the output span and how many output samples the frames cover."""
    left = cfg.window_len // 2
    norm = _ola_norm(T, cfg)[left:left + out_len]
    covered = len(norm)
    if np.any(norm < 1e-8):
        bad = int(np.argmax(norm < 1e-8))
        raise ContractError(f"overlap-add normalizer vanishes at sample {bad}")
    return norm, covered


def istft_array(spec: np.ndarray, cfg: StftConfig = StftConfig(), out_len: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft_array` for [..., T, F] -> [..., out_len]."""
    spec = np.asarray(spec)
    T, F = spec.shape[-2:]
    if F != cfg.n_bins:
        raise ContractError(f"spectrogram has {F} bins, config expects {cfg.n_bins}")
    if out_len is None:
        out_len = T * cfg.hop
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=-1)[..., :cfg.window_len] * cfg.window
    buf = np.zeros(spec.shape[:-2] + ((T - 1) * cfg.hop + cfg.window_len,))
    for t in range(T):
        buf[..., t * cfg.hop:t * cfg.hop + cfg.window_len] += frames[..., t, :]
    norm, covered = _synthesis_plan(T, cfg, out_len)
    left = cfg.window_len // 2
    out = np.zeros(spec.shape[:-2] + (out_len,))
    out[..., :covered] = buf[..., left:left + covered] / norm
    return out


def istft(S: Spectrogram, cfg: StftConfig = StftConfig(), out_len: int | None = None) -> Waveform:
    return Waveform(istft_array(S.data.numpy(), cfg, out_len), SAMPLE_RATE)


def istft_tensor(S: ComplexTensor, cfg: StftConfig, out_len: int) -> RealTensor:
    """Differentiable ISTFT of [..., T, F] -> [..., out_len] on the tape."""
    T, F = S.shape[-2:]
    dtype = S.dtype
    out = RealTensor(istft_array(S.re + 1j * S.im, cfg, out_len).astype(dtype))
    norm, covered = _synthesis_plan(T, cfg, out_len)
    left = cfg.window_len // 2
    N = cfg.fft_size
    weight = np.full(F, 2.0)
    weight[0] = 1.0
    if N % 2 == 0:
        weight[-1] = 1.0
    weight /= N

    def backward(g):
        gbuf = np.zeros(g[0].shape[:-1] + ((T - 1) * cfg.hop + cfg.window_len,))
        gbuf[..., left:left + covered] = g[0][..., :covered] / norm
        idx = np.arange(T)[:, None] * cfg.hop + np.arange(cfg.window_len)[None, :]
        gframes = gbuf[..., idx] * cfg.window
        gx = np.fft.rfft(gframes, n=N, axis=-1) * weight
        return [[gx.real.astype(dtype), gx.imag.astype(dtype)]]

    return track("istft", out, [S], backward)


def compress_magnitude(S, P: float) -> RealTensor:
    """|S|^P using the stabilized magnitude."""
    if not 0 < P <= 1:
        raise ContractError(f"compression exponent must lie in (0, 1], got {P}")
    data = S.data if isinstance(S, Spectrogram) else S
    mag = ct.magnitude(data)
    return mag if P == 1 else ct.power(mag, P)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


class WavError(ValueError):
    pass


class WavParseError(WavError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedWavFormat(WavError):
    pass


def _read_chunks(raw: bytes):
    if len(raw) < 12:
        raise WavParseError("file too short for a RIFF header", len(raw))
    if raw[:4] != b"RIFF":
        raise WavParseError("missing RIFF tag", 0)
    if raw[8:12] != b"WAVE":
        raise WavParseError("missing WAVE tag", 8)
    pos = 12
    chunks = {}
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise WavParseError("truncated chunk header", pos)
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = pos + 8
        if body + size > len(raw):
            raise WavParseError(f"chunk {cid!r} declares {size} bytes but file ends", body)
        chunks.setdefault(cid, (body, size))
        pos = body + size + (size & 1)
    return chunks


def resample_linear(x: np.ndarray, src_rate: int, dst_rate: int = SAMPLE_RATE) -> np.ndarray:
    if src_rate == dst_rate:
        return x
    n_out = int(round(len(x) * dst_rate / src_rate))
    pos = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(pos, np.arange(len(x)), x)


def read_wav(path, target_rate: int | None = SAMPLE_RATE) -> Waveform:
    """Read PCM-16 or float-32 RIFF audio; first channel, resampled to ``target_rate``.

    ``target_rate=None`` keeps the file's own rate.
    """
    raw = Path(path).read_bytes()
    chunks = _read_chunks(raw)
    if b"fmt " not in chunks:
        raise WavParseError("no fmt chunk", 12)
    if b"data" not in chunks:
        raise WavParseError("no data chunk", 12)
    fpos, fsize = chunks[b"fmt "]
    if fsize < 16:
        raise WavParseError("fmt chunk shorter than 16 bytes", fpos)
    fmt, channels, rate, _, block, bits = struct.unpack("<HHIIHH", raw[fpos:fpos + 16])
    if fmt == 0xFFFE and fsize >= 40:
        fmt = struct.unpack("<H", raw[fpos + 24:fpos + 26])[0]
    if channels < 1 or rate < 1:
        raise WavParseError(f"invalid channel count {channels} or rate {rate}", fpos)
    if (fmt, bits) == (1, 16):
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif (fmt, bits) == (3, 32):
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedWavFormat(f"unsupported encoding: format tag {fmt}, {bits} bits per sample")
    dpos, dsize = chunks[b"data"]
    frame_bytes = dtype.itemsize * channels
    n = dsize // frame_bytes
    data = np.frombuffer(raw, dtype=dtype, count=n * channels, offset=dpos).reshape(n, channels)
    x = data[:, 0].astype(np.float64) * scale
    if target_rate is None:
        return Waveform(x, rate)
    return Waveform(resample_linear(x, rate, target_rate), target_rate)


def write_wav(path, w, sample_rate: int | None = None, encoding: str = "pcm16") -> None:
    x = _samples(w).astype(np.float64).reshape(-1)
    rate = sample_rate or (w.sample_rate if isinstance(w, Waveform) else SAMPLE_RATE)
    if encoding == "pcm16":
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        fmt, bits = 1, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        fmt, bits = 3, 32
    else:
        raise UnsupportedWavFormat(f"unknown encoding {encoding!r}")
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, fmt, 1, rate, rate * block, block, bits)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x, dtype=np.float64)))


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(power(signal) / power(noise))


def synth_mixture(clean, noise, snr: float) -> tuple[Waveform, Waveform]:
    """Scale ``noise`` (looped or cut to the clean length) to hit ``snr`` dB and add it."""
    c = _samples(clean).astype(np.float64)
    nz = _samples(noise).astype(np.float64)
    if math.sqrt(power(c)) <= 1e-6 or len(nz) == 0 or math.sqrt(power(nz)) <= 1e-6:
        raise ContractError("clean and noise must both be non-silent (RMS > 1e-6)")
    nz = np.resize(nz, len(c))
    nz = nz * math.sqrt(power(c) / (power(nz) * 10.0 ** (snr / 10.0)))
    return Waveform(c + nz), Waveform(c)


@dataclass
class ToneBank:
    """Deterministic synthetic speech-like and noise sources for desk-scale runs."""

    seed: int = 0
    rng: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def clean(self, seconds: float = 2.0) -> np.ndarray:
        """Harmonic tone with a slow pitch glide and syllable-like envelope."""
        n = int(seconds * SAMPLE_RATE)
        t = np.arange(n) / SAMPLE_RATE
        f0 = self.rng.uniform(110, 220) * (1 + 0.1 * np.sin(2 * np.pi * self.rng.uniform(0.5, 2) * t))
        phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
        x = sum(np.sin(k * phase + self.rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
        env = 0.5 * (1 - np.cos(2 * np.pi * self.rng.uniform(2, 4) * t))
        x = x * env
        return 0.5 * x / np.max(np.abs(x))

    def noise(self, seconds: float = 2.0) -> np.ndarray:
        n = int(seconds * SAMPLE_RATE)
        white = self.rng.standard_normal(n)
        # mild low-pass for a pinkish tilt
        return np.convolve(white, np.ones(4) / 4, mode="same")
