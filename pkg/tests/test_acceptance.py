"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from d2former import cli
from d2former import ctensor as ct
from d2former.attention import attention_weights
from d2former.conformer import ComplexConformer, from_freq_view, from_time_view, to_freq_view, to_time_view
from d2former.ctensor import ComplexTensor
from d2former.desk import TOY_LR, toy_run
from d2former.layers import CFSMN, ComplexConv2d, ComplexConvTranspose2d, ComplexInstanceNorm, ComplexLinear, ComplexPReLU
from d2former.model import D2Former, D2FormerConfig, MaskingDecoder, count_params, fuse
from d2former.signal import istft_array, stft_array

from conftest import cz
from test_layers import conv_oracle, fsmn_oracle


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def _randomize(module, rng):
    for _, p in module.named_parameters():
        for plane in p.planes:
            plane[...] = rng.standard_normal(plane.shape)
    return module


def conv_t_oracle(x, w, b, stride, pad):
    B, Ci, H, W = x.shape
    _, Co, kh, kw = w.shape
    full = np.zeros((B, Co, (H - 1) * stride[0] + kh, (W - 1) * stride[1] + kw), complex)
    for n in range(B):
        for c in range(Ci):
            for o in range(Co):
                for i in range(H):
                    for j in range(W):
                        for u in range(kh):
                            for v in range(kw):
                                full[n, o, i * stride[0] + u, j * stride[1] + v] += w[c, o, u, v] * x[n, c, i, j]
    (t0, t1), (f0, f1) = pad
    out = full[:, :, t0:full.shape[2] - t1, f0:full.shape[3] - f1]
    return out + b[None, :, None, None]


def norm_oracle(x, gamma, beta, eps=1e-5):
    out = np.zeros_like(x)
    B, C = x.shape[:2]
    for n in range(B):
        for c in range(C):
            planes = []
            for p in (x[n, c].real, x[n, c].imag):
                planes.append((p - p.mean()) / np.sqrt(p.var() + eps))
            out[n, c] = gamma[c] * (planes[0] + 1j * planes[1]) + beta[c]
    return out


def prelu_oracle(x, a):
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        z, s = x[idx], a[idx[1]]
        out[idx] = (z.real if z.real > 0 else s * z.real) + 1j * (z.imag if z.imag > 0 else s * z.imag)
    return out


def _layer_errors(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errs = {}
    m = _randomize(ComplexConv2d(2, 3, (2, 3), stride=(1, 2), dilation=(2, 1), rng=rng), rng)
    x = cz(rng, (1, 2, 6, 9))
    errs["conv2d"] = np.abs(m(x).numpy() - conv_oracle(x.numpy(), m.weight.numpy(), m.bias.numpy(), (1, 2), (2, 1))).max()
    m = _randomize(ComplexConvTranspose2d(3, 2, (1, 3), stride=(1, 2), padding=((0, 0), (1, 1)), rng=rng), rng)
    x = cz(rng, (1, 3, 2, 5))
    errs["conv_transpose2d"] = np.abs(m(x).numpy() - conv_t_oracle(x.numpy(), m.weight.numpy(), m.bias.numpy(),
                                                                   (1, 2), ((0, 0), (1, 1)))).max()
    m = _randomize(ComplexLinear(4, 3, rng=rng), rng)
    x = cz(rng, (2, 5, 4))
    want = np.zeros((2, 5, 3), complex)
    for idx in np.ndindex(2, 5):
        for o in range(3):
            want[idx + (o,)] = m.bias.numpy()[o] + sum(x.numpy()[idx + (c,)] * m.weight.numpy()[c, o] for c in range(4))
    errs["linear"] = np.abs(m(x).numpy() - want).max()
    m = _randomize(ComplexInstanceNorm(3), rng)
    x = cz(rng, (2, 3, 4, 5), scale=3.0)
    errs["instance_norm"] = np.abs(m(x).numpy() - norm_oracle(x.numpy(), m.gamma.numpy(), m.beta.numpy())).max()
    m = ComplexPReLU(3)
    m.slope.data[:] = rng.uniform(0, 1, 3)
    x = cz(rng, (2, 3, 4))
    errs["prelu"] = np.abs(m(x).numpy() - prelu_oracle(x.numpy(), m.slope.data)).max()
    m = _randomize(CFSMN(3, lookback=2, lookahead=3, rng=rng), rng)
    h = cz(rng, (1, 2, 9, 3))
    proj = h.numpy() @ m.proj.weight.numpy() + m.proj.bias.numpy()
    want = h.numpy() + fsmn_oracle(proj, m.taps.numpy(), 2)
    errs["cfsmn"] = np.abs(m(h).numpy() - want).max()
    return errs


def test_criterion_1_layer_equivalence(report):
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    with ct.precision(np.float64):
        for seed in range(10):
            for name, e in _layer_errors(seed).items():
                worst[name] = max(worst.get(name, 0.0), float(e))
    secs = time.perf_counter() - t0
    top = max(worst.values())
    report(1, top <= 1e-5 and secs < 30, f"worst {top:.1e} over {len(worst)} layers x 10 seeds, {secs:.1f}s")


def test_criterion_2_gradcheck(report, capsys):
    t0 = time.perf_counter()
    code = cli.main(["gradcheck"])
    secs = time.perf_counter() - t0
    out = capsys.readouterr().out
    report(2, code == 0 and secs < 300, f"exit {code}, {secs:.0f}s; {out.strip().splitlines()[-1]}")


def test_criterion_3_attention_contract(report):
    rng = np.random.default_rng(3)
    rows, phase = 0.0, 0.0
    with ct.precision(np.float64):
        for _ in range(20):
            q, k = cz(rng, (2, 4, 7, 8), scale=3.0), cz(rng, (2, 4, 7, 8), scale=3.0)
            a = attention_weights(q, k).data
            rows = max(rows, float(np.abs(a.sum(-1) - 1).max()))
            rot = ComplexTensor(np.exp(1j * rng.uniform(0, 2 * np.pi)) * q.numpy())
            phase = max(phase, float(np.abs(attention_weights(rot, k).data - a).max()))
    report(3, rows <= 1e-6 and phase <= 1e-6, f"row-sum error {rows:.1e}, phase change {phase:.1e}")


def test_criterion_4_signal_round_trip(report):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    lengths = rng.integers(100, 48001, 20)
    err = max(float(np.abs(istft_array(stft_array(x), out_len=len(x)) - x).max())
              for x in (rng.standard_normal(int(n)) for n in lengths))
    secs = time.perf_counter() - t0
    report(4, err <= 1e-6 and secs < 30, f"max error {err:.1e} over 20 lengths, {secs:.1f}s")


def test_criterion_5_fusion(report):
    model = D2Former(D2FormerConfig.toy(), seed=5)
    Y = model.spectrogram(np.random.default_rng(5).standard_normal((1, 1600)))
    out = model(Y)
    mask_only = model(Y, alpha=1.0, beta=0.0).S_hat.numpy()
    spec_only = model(Y, alpha=0.0, beta=1.0).S_hat.numpy()
    exact = (np.array_equal(mask_only, ct.cmul_elementwise(out.mask, Y).numpy())
             and np.array_equal(spec_only, out.S_map.numpy()))
    rng = np.random.default_rng(6)
    lin = 0.0
    with ct.precision(np.float64):
        for _ in range(10):
            M, S, Yr = (cz(rng, (1, 1, 5, 7)) for _ in range(3))
            a, b = rng.uniform(0, 2, 2)
            lin = max(lin, float(np.abs(fuse(M, S, Yr, a, b).numpy()
                                        - (a * fuse(M, S, Yr, 1, 0).numpy() + b * fuse(M, S, Yr, 0, 1).numpy())).max()))
    report(5, exact and lin <= 1e-6, f"extremes exact: {exact}, linearity error {lin:.1e}")


def test_criterion_6_mask_bound(report):
    cfg = D2FormerConfig.toy()
    rng = np.random.default_rng(7)
    dec = MaskingDecoder(cfg, rng=rng)
    worst = 0.0
    for i in range(100):
        scale = 10.0 ** rng.uniform(-2, 3)
        M = dec(cz(rng, (1, cfg.C, 3, cfg.F2), scale=scale))
        worst = max(worst, float(np.abs(M.re).max()), float(np.abs(M.im).max()))
    report(6, worst < 1.0, f"largest |plane| {worst!r} over 100 inputs")


def test_criterion_7_parameter_budget(report):
    n = count_params(D2FormerConfig())
    report(7, 0.70e6 <= n <= 1.05e6, f"{n} parameters")


@pytest.mark.slow
def test_criterion_8_desk_learning(report):
    run = toy_run(steps=200, lr=TOY_LR, seed=0)
    ok = run.loss_ratio < 0.5 and run.improvement_db >= 5.0 and run.seconds < 600
    report(8, ok, f"loss {run.losses[0]:.3f} -> {run.losses[-1]:.3f} (ratio {run.loss_ratio:.2f}), "
                  f"SI-SNR improvement {run.improvement_db:.2f} dB, {run.seconds:.0f}s")


def test_criterion_9_determinism(report, tmp_path, capsys):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text("toy = true\ndata.segment_seconds = 0.5\n")
    outs = []
    for i in range(2):
        ckpt = tmp_path / f"run{i}.ckpt"
        assert cli.main(["train", "--toy-pairs", "3", "--config", str(cfg), "--out", str(ckpt),
                         "--steps", "4", "--seed", "11"]) == 0
        outs.append((ckpt.read_bytes(), (tmp_path / f"run{i}.ckpt.log").read_text()))
    capsys.readouterr()
    same = outs[0] == outs[1]
    report(9, same, f"checkpoints and loss traces identical: {same}")


def test_criterion_10_dual_path_locality(report):
    rng = np.random.default_rng(10)
    leak = 0.0
    with ct.precision(np.float64):
        for _ in range(3):
            cf = ComplexConformer(4, heads=2, rng=rng)
            x = cz(rng, (1, 4, 6, 5))
            for to_view, from_view, axis, n in ((to_time_view, from_time_view, 3, 5),
                                                (to_freq_view, from_freq_view, 2, 6)):
                base = from_view(cf(to_view(x)), x.shape).numpy()
                k = int(rng.integers(n))
                xp = x.numpy().copy()
                np.moveaxis(xp, axis, 0)[k] = 0
                pert = from_view(cf(to_view(ComplexTensor(xp))), x.shape).numpy()
                diff = np.delete(np.abs(pert - base), k, axis=axis)
                leak = max(leak, float(diff.max()))
    report(10, leak <= 1e-6, f"largest leakage {leak:.1e}")
