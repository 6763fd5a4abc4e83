"""Losses, AdamW, plateau schedule, datasets and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import ctensor as ct
from .ctensor import ComplexTensor, ContractError, Node, RealTensor
from .model import D2Former
from .signal import SAMPLE_RATE, ToneBank, Waveform, read_wav, stft_array, synth_mixture

# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 0.2   # time-domain MAE
    gamma2: float = 0.05  # metric-network term, inert unless a hook is supplied
    gamma3: float = 0.1   # complex-plane MSE
    P: float = 0.3        # magnitude compression exponent

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3", "P"):
            if getattr(self, name) < 0:
                raise ContractError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.P <= 1:
            raise ContractError(f"compression exponent P must lie in (0, 1], got {self.P}")


def _masked_mean(x: RealTensor, mask: np.ndarray | None) -> RealTensor:
    if mask is None:
        return ct.rmean(x)
    m = np.broadcast_to(mask, x.shape)
    return ct.rsum(x * ct.constant(m.astype(x.dtype))) * (1.0 / max(float(m.sum()), 1.0))


def _as_complex(S) -> ComplexTensor:
    if isinstance(S, ComplexTensor):
        return S
    S = np.asarray(S)
    return ComplexTensor(S.real, S.imag)


def loss_tf(S, S_hat: ComplexTensor, w: LossWeights = LossWeights(), mask: np.ndarray | None = None) -> RealTensor:
    """MSE of compressed magnitudes plus gamma3 times the MSE of each plane."""
    S = _as_complex(S)
    if S.shape != S_hat.shape:
        raise ContractError(f"spectrogram shapes differ: {S.shape} vs {S_hat.shape}")
    mag = ct.power(ct.magnitude(S_hat), w.P)
    ref = np.power(np.sqrt(S.re ** 2 + S.im ** 2 + ct.EPS_MAG), w.P)
    d = mag - ct.constant(ref.astype(mag.dtype))
    loss = _masked_mean(d * d, mask)
    if w.gamma3 > 0:
        dr = ct.real_part(S_hat) - ct.constant(S.re.astype(S_hat.dtype))
        di = ct.imag_part(S_hat) - ct.constant(S.im.astype(S_hat.dtype))
        loss = loss + (_masked_mean(dr * dr, mask) + _masked_mean(di * di, mask)) * w.gamma3
    return loss


def loss_time(s, s_hat: RealTensor, mask: np.ndarray | None = None) -> RealTensor:
    """Mean absolute error between waveforms."""
    s = np.asarray(s.data if isinstance(s, RealTensor) else s)
    if s.shape != s_hat.shape:
        raise ContractError(f"waveform lengths differ: {s.shape} vs {s_hat.shape}")
    return _masked_mean(ct.rabs(s_hat - ct.constant(s.astype(s_hat.dtype))), mask)


QNetHook = Callable[[RealTensor, np.ndarray], RealTensor]


def loss_terms(S, S_hat, s, s_hat, w: LossWeights = LossWeights(), qnet: QNetHook | None = None,
               tf_mask=None, time_mask=None) -> dict[str, RealTensor]:
    terms = {"l_tf": loss_tf(S, S_hat, w, tf_mask), "l_time": loss_time(s, s_hat, time_mask)}
    terms["l_qnet"] = qnet(s_hat, np.asarray(s)) if qnet is not None else ct.constant(np.zeros((), s_hat.dtype))
    terms["loss"] = terms["l_tf"] + terms["l_time"] * w.gamma1 + terms["l_qnet"] * w.gamma2
    return terms


def total_loss(S, S_hat, s, s_hat, w: LossWeights = LossWeights(), qnet: QNetHook | None = None,
               tf_mask=None, time_mask=None) -> RealTensor:
    """L_TF + gamma1 * L_time + gamma2 * qnet(...); the hook defaults to zero."""
    return loss_terms(S, S_hat, s, s_hat, w, qnet, tf_mask, time_mask)["loss"]


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamWState:
    m: list[list[np.ndarray]]
    v: list[list[np.ndarray]]
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    skipped: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Node], **kw) -> "AdamWState":
        m = [[np.zeros_like(p) for p in x.planes] for x in params]
        v = [[np.zeros_like(p) for p in x.planes] for x in params]
        return cls(m, v, **kw)


def grads_finite(grads: Sequence[Sequence[np.ndarray]]) -> bool:
    return all(np.isfinite(g).all() for gs in grads for g in gs)


def global_norm(grads: Sequence[Sequence[np.ndarray]]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for gs in grads for g in gs))


def clip_by_global_norm(grads: list[list[np.ndarray]], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most ``max_norm``; returns the norm before."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        k = max_norm / (norm + 1e-12)
        for gs in grads:
            for g in gs:
                g *= k
    return norm


def adamw_step(params: Sequence[Node], grads: Sequence[Sequence[np.ndarray]], st: AdamWState) -> bool:
    """Decoupled-weight-decay Adam update in place; returns False (and counts) when skipped."""
    if not grads_finite(grads):
        st.skipped += 1
        return False
    st.step += 1
    t = st.step
    c1 = 1.0 - st.beta1 ** t
    c2 = 1.0 - st.beta2 ** t
    for p, gs, ms, vs in zip(params, grads, st.m, st.v):
        for plane, g, m, v in zip(p.planes, gs, ms, vs):
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * np.square(g)
            update = (m / c1) / (np.sqrt(v / c2) + st.eps)
            plane -= (st.lr * (update + st.weight_decay * plane)).astype(plane.dtype)
    return True


@dataclass
class LrSchedule:
    """Constant for ``hold_epochs``, then reduce-on-plateau on validation loss."""

    base_lr: float = 5e-4
    hold_epochs: int = 30
    decay_factor: float = 0.5
    patience_epochs: int = 1
    lr: float = field(init=False)
    best: float = field(init=False, default=math.inf)
    bad_epochs: int = field(init=False, default=0)
    last_epoch: int = field(init=False, default=-1)

    def __post_init__(self):
        self.lr = self.base_lr

    def step(self, epoch: int, val_loss: float) -> float:
        """Record the validation loss of ``epoch``; returns the lr for the next epoch."""
        if epoch < self.last_epoch:
            raise ContractError(f"epoch went backwards: {epoch} after {self.last_epoch}")
        self.last_epoch = epoch
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        elif epoch >= self.hold_epochs:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience_epochs:
                self.lr *= self.decay_factor
                self.bad_epochs = 0
        return self.lr


def lr_schedule_step(st: LrSchedule, epoch: int, val_loss: float) -> float:
    return st.step(epoch, val_loss)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    mode: str = "synthetic"  # "paired" or "synthetic"
    snrs: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    segment_seconds: float = 2.0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.mode not in ("paired", "synthetic"):
            raise ContractError(f"dataset mode must be 'paired' or 'synthetic', got {self.mode!r}")
        if self.segment_seconds <= 0:
            raise ContractError("segment length must be positive")

    @property
    def segment(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))


@dataclass
class Pair:
    name: str
    clean: np.ndarray
    noisy: np.ndarray

    def __post_init__(self):
        if self.clean.shape != self.noisy.shape or self.clean.ndim != 1:
            raise ContractError(f"pair {self.name}: clean {self.clean.shape} and noisy {self.noisy.shape} differ")


def _wav_stems(d: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(d.glob("*.wav"))}


def load_paired(root, sample_rate: int = SAMPLE_RATE) -> list[Pair]:
    """``root/clean/<stem>.wav`` matched with ``root/noisy/<stem>.wav``."""
    root = Path(root)
    cdir, ndir = root / "clean", root / "noisy"
    for d in (root, cdir, ndir):
        if not d.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {d}")
    clean, noisy = _wav_stems(cdir), _wav_stems(ndir)
    unmatched = sorted(set(clean) ^ set(noisy))
    if unmatched:
        raise ContractError(f"unpaired files (stems): {unmatched[:5]}")
    if not clean:
        raise ContractError(f"no .wav pairs under {root}")
    pairs = []
    for stem in sorted(clean):
        c = read_wav(clean[stem], sample_rate).samples
        n = read_wav(noisy[stem], sample_rate).samples
        k = min(len(c), len(n))
        pairs.append(Pair(stem, c[:k], n[:k]))
    return pairs


def synthesize_pairs(clean: Sequence[tuple[str, np.ndarray]], noise: Sequence[np.ndarray],
                     snrs: Iterable[float], rng: np.random.Generator) -> list[Pair]:
    """One noisy variant per (clean file, SNR); noises are drawn from ``rng``."""
    if not clean or not noise:
        raise ContractError("synthesis needs at least one clean and one noise signal")
    out = []
    for name, c in clean:
        for snr in snrs:
            nz = noise[int(rng.integers(len(noise)))]
            out.append(Pair(f"{name}_snr{snr:g}", c, synth_mixture(c, nz, snr)[0].samples))
    return out


def load_synthetic(clean_dir, noise_dir, snrs: Iterable[float], rng: np.random.Generator,
                   sample_rate: int = SAMPLE_RATE) -> list[Pair]:
    dirs = {"clean": Path(clean_dir), "noise": Path(noise_dir)}
    for label, d in dirs.items():
        if not d.is_dir():
            raise FileNotFoundError(f"{label} directory not found: {d}")
    clean = [(p.stem, read_wav(p, sample_rate).samples) for p in _wav_stems(dirs["clean"]).values()]
    noise = [read_wav(p, sample_rate).samples for p in _wav_stems(dirs["noise"]).values()]
    return synthesize_pairs(clean, noise, snrs, rng)


def toy_pairs(n: int = 3, snr_db: float = 5.0, seconds: float = 2.0, seed: int = 0) -> list[Pair]:
    """Tonal 'speech' in smoothed noise at a fixed SNR, fully determined by ``seed``."""
    bank = ToneBank(seed)
    pairs = []
    for i in range(n):
        c = bank.clean(seconds)
        pairs.append(Pair(f"toy{i}", c, synth_mixture(c, bank.noise(seconds), snr_db)[0].samples))
    return pairs


@dataclass
class Batch:
    clean: np.ndarray    # [B, seg]
    noisy: np.ndarray    # [B, seg]
    lengths: np.ndarray  # valid samples per row

    @property
    def full(self) -> bool:
        return bool(np.all(self.lengths == self.clean.shape[1]))


def sample_batch(data: Sequence[Pair], rng: np.random.Generator, batch_size: int = 2,
                 segment: int = 32000) -> Batch:
    """Random items, random ``segment``-sample crops; short items are zero-padded."""
    if not data:
        raise ContractError("dataset is empty")
    idx = rng.choice(len(data), size=batch_size, replace=len(data) < batch_size)
    clean = np.zeros((batch_size, segment))
    noisy = np.zeros((batch_size, segment))
    lengths = np.zeros(batch_size, dtype=np.int64)
    for row, i in enumerate(idx):
        p = data[int(i)]
        n = len(p.clean)
        start = int(rng.integers(n - segment + 1)) if n > segment else 0
        k = min(segment, n)
        clean[row, :k] = p.clean[start:start + k]
        noisy[row, :k] = p.noisy[start:start + k]
        lengths[row] = k
    return Batch(clean, noisy, lengths)


def level_normalize(noisy: np.ndarray, clean: np.ndarray | None = None, lengths=None):
    """Scale rows to unit RMS of the noisy input (the clean target shares the factor)."""
    n = noisy.shape[-1] if lengths is None else np.asarray(lengths)[:, None]
    rms = np.sqrt(np.sum(noisy ** 2, axis=-1, keepdims=True) / n)
    k = 1.0 / np.where(rms > 1e-8, rms, 1.0)
    return noisy * k, (None if clean is None else clean * k), k


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

SI_SNR_CAP = 60.0


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)


def si_snr(ref, est, cap: float = SI_SNR_CAP) -> float:
    """Scale-invariant SNR in dB after removing means, capped at ``cap``."""
    r, e = _samples(ref), _samples(est)
    if r.shape != e.shape:
        raise ContractError(f"lengths differ: {r.shape} vs {e.shape}")
    r = r - r.mean()
    e = e - e.mean()
    rr = float(r @ r)
    if rr <= 1e-20:
        raise ContractError("reference is silent")
    target = (float(e @ r) / rr) * r
    noise = e - target
    tn, nn = float(target @ target), float(noise @ noise)
    if nn <= tn * 10 ** (-cap / 10):
        return cap
    return min(cap, 10 * math.log10(tn / nn))


def segmental_snr(ref, est, frame: int = 256, lo: float = -10.0, hi: float = 35.0) -> float:
    """Mean per-frame SNR (clamped to [lo, hi] dB) over non-overlapping frames."""
    r, e = _samples(ref), _samples(est)
    if r.shape != e.shape:
        raise ContractError(f"lengths differ: {r.shape} vs {e.shape}")
    n = len(r) // frame
    if n == 0:
        raise ContractError(f"signal shorter than one frame ({frame} samples)")
    rf = r[:n * frame].reshape(n, frame)
    df = (r - e)[:n * frame].reshape(n, frame)
    snr = 10 * np.log10((np.sum(rf ** 2, 1) + 1e-20) / (np.sum(df ** 2, 1) + 1e-20))
    return float(np.mean(np.clip(snr, lo, hi)))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def format_metrics(**fields) -> str:
    parts = []
    for k, v in fields.items():
        parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def parse_metrics(line: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in line.split())


@dataclass
class TrainConfig:
    batch_size: int = 2
    clip_norm: float = 5.0  # <= 0 disables clipping
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    hold_epochs: int = 30
    decay_factor: float = 0.5
    patience_epochs: int = 1
    steps_per_epoch: int = 0  # 0 -> ceil(len(data) / batch_size)


@dataclass
class StepResult:
    loss: float
    terms: dict[str, float]
    grad_norm: float
    applied: bool


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    grad_norm: float
    skipped: int
    steps: int


class Trainer:
    """Owns the optimizer state, schedule, and the single RNG for batch sampling."""

    def __init__(self, model: D2Former, weights: LossWeights = LossWeights(), cfg: TrainConfig = TrainConfig(),
                 spec: DatasetSpec = DatasetSpec(), seed: int = 0, qnet: QNetHook | None = None, log=None):
        self.model = model
        self.weights = weights
        self.cfg = cfg
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.qnet = qnet
        self.params = model.parameters()
        self.opt = AdamWState.for_params(self.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                         eps=cfg.eps, weight_decay=cfg.weight_decay)
        self.schedule = LrSchedule(cfg.lr, cfg.hold_epochs, cfg.decay_factor, cfg.patience_epochs)
        self.log = log
        self.data: Sequence[Pair] = []
        self.global_step = 0
        self.epoch = 0

    def _forward_loss(self, batch: Batch) -> dict[str, RealTensor]:
        model = self.model
        noisy, clean, _ = level_normalize(batch.noisy, batch.clean, batch.lengths)
        seg = noisy.shape[-1]
        dtype = self.params[0].dtype
        S = stft_array(clean.astype(dtype), model.cfg.stft)[:, None]
        out = model(model.spectrogram(noisy.astype(dtype)))
        s_hat = model.waveform(out.S_hat, seg)
        tf_mask = time_mask = None
        if not batch.full:
            time_mask = np.arange(seg)[None, :] < batch.lengths[:, None]
            frames = np.arange(S.shape[2]) * model.cfg.hop
            tf_mask = (frames[None, :] < batch.lengths[:, None])[:, None, :, None]
        return loss_terms(S, out.S_hat, clean.astype(dtype), s_hat, self.weights, self.qnet, tf_mask, time_mask)

    def step(self, batch: Batch | None = None) -> StepResult:
        if batch is None:
            batch = sample_batch(self.data, self.rng, self.cfg.batch_size, self.spec.segment)
        with ct.Tape() as tape:
            terms = self._forward_loss(batch)
        grads_map = tape.backward(terms["loss"])
        grads = [[g.copy() for g in grads_map.planes(p)] for p in self.params]
        norm = global_norm(grads) if not grads_finite(grads) else clip_by_global_norm(grads, self.cfg.clip_norm)
        self.opt.lr = self.schedule.lr
        applied = adamw_step(self.params, grads, self.opt)
        self.global_step += 1
        values = {k: float(v.item()) for k, v in terms.items()}
        if self.log is not None:
            self.log(format_metrics(epoch=self.epoch, step=self.global_step, **values,
                                    grad_norm=float(norm), lr=float(self.opt.lr), skipped=self.opt.skipped))
        return StepResult(values["loss"], values, norm, applied)

    def evaluate(self, data: Sequence[Pair]) -> float:
        """Mean total loss over whole items (no cropping, no gradients)."""
        if not data:
            raise ContractError("validation set is empty")
        losses = []
        with ct.no_grad():
            for p in data:
                b = Batch(p.clean[None], p.noisy[None], np.array([len(p.clean)]))
                losses.append(float(self._forward_loss(b)["loss"].item()))
        return float(np.mean(losses))

    def train_epoch(self, data: Sequence[Pair]) -> EpochStats:
        if not data:
            raise ContractError("dataset is empty")
        self.data = data
        steps = self.cfg.steps_per_epoch or math.ceil(len(data) / self.cfg.batch_size)
        skipped0 = self.opt.skipped
        losses, norms = [], []
        for _ in range(steps):
            r = self.step()
            losses.append(r.loss)
            norms.append(r.grad_norm)
        stats = EpochStats(self.epoch, float(np.mean(losses)), float(np.mean(norms)),
                           self.opt.skipped - skipped0, steps)
        self.epoch += 1
        return stats

    def end_epoch(self, val_loss: float) -> float:
        return self.schedule.step(self.epoch - 1, val_loss)


def train_epoch(trainer: Trainer, data: Sequence[Pair]) -> EpochStats:
    return trainer.train_epoch(data)


def split_dataset(data: Sequence[Pair], val_fraction: float, rng: np.random.Generator):
    """Deterministic shuffle-split; with fewer than two items the training set doubles as validation."""
    if len(data) < 2 or val_fraction <= 0:
        return list(data), list(data)
    order = rng.permutation(len(data))
    k = max(1, int(round(val_fraction * len(data))))
    return [data[i] for i in order[k:]], [data[i] for i in order[:k]]
