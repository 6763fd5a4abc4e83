"""Desk-scale learning run: the toy model on a few synthetic pairs."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import D2Former, D2FormerConfig
from .training import TrainConfig, Trainer, si_snr, toy_pairs

# 200 steps are far too few for the full-protocol rate of 5e-4 to converge
TOY_LR = 1e-3


@dataclass
class ToyRun:
    losses: list[float]
    noisy_si_snr: list[float]
    enhanced_si_snr: list[float]
    seconds: float
    model: D2Former = field(repr=False)

    @property
    def loss_ratio(self) -> float:
        return self.losses[-1] / self.losses[0]

    @property
    def improvement_db(self) -> float:
        return float(np.mean(self.enhanced_si_snr) - np.mean(self.noisy_si_snr))


def toy_run(steps: int = 200, pairs: int = 3, snr_db: float = 5.0, seconds: float = 2.0, lr: float = TOY_LR,
            seed: int = 0, log=None) -> ToyRun:
    data = toy_pairs(pairs, snr_db, seconds, seed=seed)
    model = D2Former(D2FormerConfig.toy(), seed=seed)
    trainer = Trainer(model, cfg=TrainConfig(lr=lr), seed=seed)
    trainer.data = data
    t0 = time.perf_counter()
    losses = []
    for i in range(steps):
        losses.append(trainer.step().loss)
        if log and (i % 20 == 0 or i == steps - 1):
            log(f"step {i + 1:4d} loss {losses[-1]:.4f} ({time.perf_counter() - t0:.0f}s)")
    seconds = time.perf_counter() - t0
    noisy = [si_snr(p.clean, p.noisy) for p in data]
    enhanced = [si_snr(p.clean, model.enhance(p.noisy)) for p in data]
    return ToyRun(losses, noisy, enhanced, seconds, model)
