import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2former import ctensor as ct
from d2former.ctensor import ComplexTensor, ContractError
from d2former.signal import (SAMPLE_RATE, StftConfig, UnsupportedWavFormat, Waveform, WavParseError,
                             compress_magnitude, istft_array, istft_tensor, power, read_wav, snr_db,
                             stft_array, synth_mixture, write_wav)

CFG = StftConfig()


def test_two_seconds_give_320_frames():
    assert stft_array(np.zeros(32000)).shape == (320, 201)


def test_zero_signal_zero_spectrum():
    assert not np.any(stft_array(np.zeros(1000)))


def test_sine_peak_bin():
    t = np.arange(4000) / SAMPLE_RATE
    S = stft_array(np.sin(2 * np.pi * 400 * t))
    assert np.argmax(np.abs(S[20])) == 10


def test_frame_matches_direct_dft():
    x = np.random.default_rng(0).standard_normal(1200)
    S = stft_array(x)
    # frame 5 covers samples 300..699 of the signal (center padding 200 on the left)
    frame = x[300:700] * CFG.window
    n = np.arange(400)
    direct = np.array([np.sum(frame * np.exp(-2j * np.pi * k * n / 400)) for k in range(201)])
    np.testing.assert_allclose(S[5], direct, atol=1e-9)


def test_empty_waveform_rejected():
    with pytest.raises(ContractError):
        stft_array(np.zeros(0))


@pytest.mark.parametrize("n", [1, 37, 400, 32000])
def test_round_trip_fixed_lengths(n):
    x = np.random.default_rng(n).standard_normal(n)
    assert np.max(np.abs(istft_array(stft_array(x), CFG, n) - x)) <= 1e-6


@given(st.integers(100, 48000))
def test_round_trip_property(n):
    x = np.random.default_rng(n).uniform(-1, 1, n)
    assert np.max(np.abs(istft_array(stft_array(x), CFG, n) - x)) <= 1e-6


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_stft_linear(a, b):
    rng = np.random.default_rng(7)
    x, y = rng.standard_normal(900), rng.standard_normal(900)
    np.testing.assert_allclose(stft_array(a * x + b * y), a * stft_array(x) + b * stft_array(y), atol=1e-6)


def test_energy_ratio_stable():
    # with 4x overlap each sample is covered by window energy sum(w^2)/hop on average
    rng = np.random.default_rng(3)
    ratios = []
    for _ in range(5):
        x = rng.standard_normal(16000)
        S = stft_array(x)
        spec_e = (np.sum(np.abs(S[:, 1:-1]) ** 2) * 2 + np.sum(np.abs(S[:, [0, -1]]) ** 2)) / CFG.fft_size
        ratios.append(spec_e / np.sum(x ** 2) / (np.sum(CFG.window ** 2) / CFG.hop))
    assert max(ratios) / min(ratios) < 1.01


def test_zero_spectrogram_zero_wave():
    assert not np.any(istft_array(np.zeros((10, 201), complex), CFG, 1000))


def test_istft_bin_mismatch():
    with pytest.raises(ContractError):
        istft_array(np.zeros((4, 100), complex), CFG, 400)


def test_istft_normalizer_vanishing(monkeypatch):
    # Hamming never reaches zero; a symmetric Hann window with hop == window length leaves gaps
    monkeypatch.setattr(StftConfig, "window", property(lambda self: np.hanning(self.window_len)))
    cfg = StftConfig(window_len=8, hop=8, fft_size=8)
    with pytest.raises(ContractError, match="normalizer"):
        istft_array(np.ones((3, 5), complex), cfg, 24)


def test_istft_tensor_matches_array(f64, rng):
    spec = rng.standard_normal((2, 5, 201)) + 1j * rng.standard_normal((2, 5, 201))
    got = istft_tensor(ComplexTensor(spec), CFG, 480).data
    np.testing.assert_allclose(got, istft_array(spec, CFG, 480), atol=1e-12)


@pytest.mark.parametrize("mag,P,want", [(1.0, 0.3, 1.0), (4.0, 0.3, 4 ** 0.3), (4.0, 1.0, 4.0)])
def test_compress_magnitude(f64, mag, P, want):
    z = ComplexTensor(np.array([mag * 0.6]), np.array([mag * 0.8]))
    assert compress_magnitude(z, P).item() == pytest.approx(want, rel=1e-9)


def test_compress_exponent_range():
    with pytest.raises(ContractError):
        compress_magnitude(ComplexTensor(np.ones(2)), 0.0)


def test_wav_pcm16_round_trip(tmp_path):
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    x = 0.5 * np.sin(2 * np.pi * 440 * t)
    write_wav(tmp_path / "a.wav", x)
    y = read_wav(tmp_path / "a.wav").samples
    assert len(y) == len(x)
    assert np.max(np.abs(y - x)) <= 1 / 32768


def test_wav_float32_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    write_wav(tmp_path / "f.wav", x, encoding="float32")
    np.testing.assert_allclose(read_wav(tmp_path / "f.wav").samples, x, atol=1e-7)


def test_wav_resampled_length(tmp_path):
    write_wav(tmp_path / "hi.wav", np.zeros(48001), sample_rate=48000)
    assert len(read_wav(tmp_path / "hi.wav").samples) == round(48001 * 16000 / 48000)
    native = read_wav(tmp_path / "hi.wav", target_rate=None)
    assert native.sample_rate == 48000 and len(native) == 48001


def test_truncated_wav(tmp_path):
    write_wav(tmp_path / "a.wav", np.zeros(100))
    raw = (tmp_path / "a.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(raw[:60])
    with pytest.raises(WavParseError) as e:
        read_wav(tmp_path / "t.wav")
    assert e.value.offset == 44
    (tmp_path / "s.wav").write_bytes(raw[:6])
    with pytest.raises(WavParseError):
        read_wav(tmp_path / "s.wav")


def test_unsupported_encoding(tmp_path):
    header = b"RIFF" + struct.pack("<I", 36) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 16000, 48000, 3, 24) + b"data" + struct.pack("<I", 0)
    (tmp_path / "u.wav").write_bytes(header)
    with pytest.raises(UnsupportedWavFormat):
        read_wav(tmp_path / "u.wav")


@given(st.floats(-10, 30))
def test_mixture_snr(snr):
    rng = np.random.default_rng(0)
    clean, noise = rng.standard_normal(4000), rng.standard_normal(3000)
    noisy, c = synth_mixture(clean, noise, snr)
    assert abs(snr_db(c.samples, noisy.samples - c.samples) - snr) <= 0.01


def test_mixture_scaling_law():
    rng = np.random.default_rng(1)
    clean, noise = rng.standard_normal(2000), rng.standard_normal(2000)
    n0 = synth_mixture(clean, noise, 0)[0].samples - clean
    n15 = synth_mixture(clean, noise, 15)[0].samples - clean
    assert math.sqrt(power(n15) / power(n0)) == pytest.approx(10 ** (-15 / 20), rel=1e-9)


def test_mixture_rejects_silence():
    with pytest.raises(ContractError):
        synth_mixture(np.zeros(100), np.ones(100), 5)
    with pytest.raises(ContractError):
        synth_mixture(Waveform(np.ones(100)), np.zeros(100), 5)
