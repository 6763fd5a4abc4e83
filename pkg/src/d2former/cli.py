"""``d2former`` command line: train, enhance, gradcheck, info, synth, dump-spec.

Exit codes: 0 success, 1 verification failure, 2 input or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import ConfigError, RunConfig, load_config
from .ctensor import ContractError, DimensionError
from .model import (CheckpointError, D2Former, D2FormerConfig, count_params, load_checkpoint,
                    param_breakdown, read_checkpoint, save_checkpoint)
from .signal import SAMPLE_RATE, WavError, read_wav, resample_linear, snr_db, stft_array, synth_mixture, write_wav
from .training import Trainer, load_paired, load_synthetic, toy_pairs

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
BUDGET = (0.70e6, 1.05e6)


class InputError(Exception):
    """Bad paths, unreadable files or inconsistent arguments (exit 2)."""


def _out(msg: str = "") -> None:
    print(msg, flush=True)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else None
    if getattr(args, "preset", None):
        base = RunConfig.toy_run() if args.preset == "toy" else RunConfig()
        if cfg is None:
            cfg = base
        elif args.preset == "toy" and not cfg.toy:
            raise InputError("--preset toy conflicts with a config file that does not set toy = true")
    return cfg or RunConfig()


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _dataset(args, cfg: RunConfig, rng):
    if args.toy_pairs:
        return toy_pairs(args.toy_pairs, args.toy_snr, cfg.data.segment_seconds, seed=args.seed)
    root = Path(args.data)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    if cfg.data.mode == "paired":
        return load_paired(root, cfg.data.sample_rate)
    return load_synthetic(root / "clean", root / "noise", cfg.data.snrs, rng, cfg.data.sample_rate)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    rng = np.random.default_rng(args.seed)
    data = _dataset(args, cfg, rng)
    model = D2Former(cfg.model, seed=int(rng.integers(1 << 31)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log")
    with open(log_path, "w") as log:
        def write(line: str) -> None:
            log.write(line + "\n")

        trainer = Trainer(model, cfg.loss, cfg.train, cfg.data, seed=int(rng.integers(1 << 31)), log=write)
        steps_left = args.steps if args.steps else math.inf
        epoch = 0
        while epoch < args.epochs and steps_left > 0:
            if steps_left < math.inf:
                per_epoch = cfg.train.steps_per_epoch or math.ceil(len(data) / cfg.train.batch_size)
                trainer.cfg = dataclasses.replace(cfg.train, steps_per_epoch=int(min(per_epoch, steps_left)))
            stats = trainer.train_epoch(data)
            steps_left -= stats.steps
            # the schedule tracks the epoch's mean training loss; no held-out split at desk scale
            lr = trainer.end_epoch(stats.mean_loss)
            write(f"epoch={stats.epoch} mean_loss={stats.mean_loss:.6g} grad_norm={stats.grad_norm:.6g} "
                  f"skipped={stats.skipped} lr={lr:.6g}")
            _out(f"epoch {stats.epoch}: loss {stats.mean_loss:.4f} ({stats.steps} steps, lr {lr:.3g})")
            epoch += 1
    save_checkpoint(model, out)
    _out(f"wrote {out} and {log_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------


def cmd_enhance(args) -> int:
    expect = load_config(args.config).model if args.config else None
    model = load_checkpoint(args.model, expect=expect)
    wav = read_wav(args.inp, target_rate=None)
    x = resample_linear(wav.samples, wav.sample_rate, SAMPLE_RATE)
    y = model.enhance(x, args.alpha, args.beta)
    y = resample_linear(y, SAMPLE_RATE, wav.sample_rate)
    y = np.resize(y, len(wav.samples)) if len(y) != len(wav.samples) else y
    write_wav(args.out, y, wav.sample_rate, encoding="float32")
    _out(f"wrote {args.out} ({len(y)} samples at {wav.sample_rate} Hz)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    dtype = np.float64 if args.precision == 64 else np.float32
    names = args.only.split(",") if args.only else None
    try:
        reports = gradcheck.run(names, dtype=dtype, seed=args.seed, log=_out)
    except KeyError as e:
        raise InputError(str(e.args[0])) from None
    bad = [r for r in reports if not r.ok]
    if bad:
        _out("FAILED: " + ", ".join(f"{r.name} ({r.error:.2e})" for r in bad))
        return EXIT_VERIFY
    _out(f"all {len(reports)} components within {gradcheck.THRESHOLD:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# info
# ---------------------------------------------------------------------------


def _architecture(cfg: D2FormerConfig) -> dict:
    d = cfg.to_dict()
    d.pop("alpha"), d.pop("beta")
    return d


def cmd_info(args) -> int:
    if args.model:
        model_cfg, _ = read_checkpoint(args.model)
        source = args.model
    else:
        model_cfg = _run_config(args).model
        source = args.config or f"preset {args.preset}"
    model = D2Former(model_cfg)
    total = count_params(model)
    _out(f"source: {source}")
    _out(f"parameters: {total}")
    for name, n in param_breakdown(model).items():
        _out(f"  {name}: {n}")
    _out("config:")
    for k, v in model_cfg.to_dict().items():
        _out(f"  model.{k} = {','.join(map(str, v)) if isinstance(v, list) else v}")
    full = _architecture(model_cfg) == _architecture(D2FormerConfig())
    if full:
        lo, hi = BUDGET
        _out(f"in_band: {str(lo <= total <= hi).lower()} (band [{lo / 1e6:.2f}M, {hi / 1e6:.2f}M])")
    else:
        _out("in_band: n/a (not the full configuration)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _wavs(d: Path, label: str) -> list[Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"{label} directory not found: {d}")
    files = sorted(d.glob("*.wav"))
    if not files:
        raise InputError(f"{label} directory has no .wav files: {d}")
    return files


def _parse_snrs(text: str) -> list[float]:
    try:
        snrs = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"bad SNR list: {text!r}") from None
    if not snrs:
        raise InputError("empty SNR list")
    return snrs


def cmd_synth(args) -> int:
    clean_files = _wavs(Path(args.clean), "clean")
    noise_files = _wavs(Path(args.noise), "noise")
    snrs = _parse_snrs(args.snr)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    noises = [read_wav(p).samples for p in noise_files]
    rows = []
    for cf in clean_files:
        clean = read_wav(cf).samples
        for snr in snrs:
            k = int(rng.integers(len(noises)))
            nz = noises[k]
            start = int(rng.integers(len(nz)))
            noisy, _ = synth_mixture(clean, np.roll(nz, -start), snr)
            stem = f"{cf.stem}_snr{snr:g}"
            write_wav(out / "clean" / f"{stem}.wav", clean, encoding="float32")
            write_wav(out / "noisy" / f"{stem}.wav", noisy, encoding="float32")
            # measured on what was written, so the manifest reflects the files
            c = read_wav(out / "clean" / f"{stem}.wav").samples
            n = read_wav(out / "noisy" / f"{stem}.wav").samples
            rows.append((stem, f"clean/{stem}.wav", f"noisy/{stem}.wav", noise_files[k].name,
                         f"{snr:g}", f"{snr_db(c, n - c):.4f}"))
    with open(out / "manifest.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["stem", "clean", "noisy", "noise", "snr_requested_db", "snr_achieved_db"])
        w.writerows(rows)
    _out(f"wrote {len(rows)} pairs and manifest.tsv under {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dump-spec
# ---------------------------------------------------------------------------


def cmd_dump_spec(args) -> int:
    cfg = _run_config(args).model.stft
    x = read_wav(args.inp).samples
    S = stft_array(x, cfg)
    T, F = S.shape
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "bin", "re", "im"])
        for t in range(T):
            for f in range(F):
                w.writerow([t, f, f"{S[t, f].real:.9e}", f"{S[t, f].imag:.9e}"])
    _out(f"wrote {T * F} rows ({T} frames x {F} bins) to {args.out}")
    return EXIT_OK


def read_spec_csv(path) -> np.ndarray:
    """Inverse of ``dump-spec``: a complex [T, F] array."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    T = max(int(r["frame"]) for r in rows) + 1
    F = max(int(r["bin"]) for r in rows) + 1
    S = np.zeros((T, F), complex)
    for r in rows:
        S[int(r["frame"]), int(r["bin"])] = float(r["re"]) + 1j * float(r["im"])
    return S


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2former", description="Complex-valued speech enhancement toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus metrics log")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory (clean/ + noisy/, or clean/ + noise/ in synthetic mode)")
    src.add_argument("--toy-pairs", type=int, metavar="N", help="use N built-in synthetic pairs instead of --data")
    t.add_argument("--toy-snr", type=float, default=5.0)
    t.add_argument("--config")
    t.add_argument("--preset", choices=["full", "toy"])
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="metrics log path (default: <out>.log)")
    t.add_argument("--epochs", type=int, default=120)
    t.add_argument("--steps", type=int, default=0, help="stop after this many optimizer steps (0: no limit)")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("enhance", help="enhance a WAV file")
    e.add_argument("--model", required=True)
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--alpha", type=float)
    e.add_argument("--beta", type=float)
    e.add_argument("--config", help="fail unless the checkpoint matches this config")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_enhance)

    g = sub.add_parser("gradcheck", help="finite-difference check of every component")
    g.add_argument("--dims", choices=["toy"], default="toy")
    g.add_argument("--precision", type=int, choices=[32, 64], default=64)
    g.add_argument("--only", help="comma-separated component names")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    i = sub.add_parser("info", help="parameter count and configuration")
    grp = i.add_mutually_exclusive_group(required=True)
    grp.add_argument("--model")
    grp.add_argument("--config")
    grp.add_argument("--preset", choices=["full", "toy"])
    i.set_defaults(fn=cmd_info)

    s = sub.add_parser("synth", help="mix clean and noise files at given SNRs")
    s.add_argument("--clean", required=True)
    s.add_argument("--noise", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--snr", default="0,5,10,15")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    d = sub.add_parser("dump-spec", help="write a WAV's spectrogram as CSV")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--config")
    d.set_defaults(fn=cmd_dump_spec)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.fn(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
    except (InputError, ConfigError, ContractError, DimensionError, WavError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
