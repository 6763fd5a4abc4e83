"""Finite-difference verification of every differentiable component.

Each registry entry builds a small float64 problem and returns the scalar
loss closure plus the tensors to perturb. The loss is a fixed random
projection of the component output, so no gradient is trivially symmetric.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ctensor as ct
from .attention import ComplexMultiHeadAttention, complex_attention
from .conformer import ComplexConformer, DualPathConformer
from .ctensor import ComplexTensor, RealTensor
from .layers import (CFSMN, ComplexConv2d, ComplexConvTranspose2d, ComplexInstanceNorm, ComplexLinear,
                     ComplexPReLU, complex_leaky_relu, complex_tanh)
from .model import D2Former, D2FormerConfig, DPBlock, Encoder, MaskingDecoder, SpectralDecoder
from .signal import StftConfig, istft_tensor

THRESHOLD = 1e-4


@dataclass
class Case:
    loss: Callable[[], RealTensor]
    params: list


@dataclass
class Report:
    name: str
    error: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.error <= THRESHOLD


def _cz(rng, shape, grad=True) -> ComplexTensor:
    return ComplexTensor(rng.standard_normal(shape), rng.standard_normal(shape), requires_grad=grad)


def project(out, rng) -> Callable[[object], RealTensor]:
    """A random linear functional matching ``out``'s shape."""
    planes = [rng.standard_normal(out.shape) for _ in out.planes]

    def f(y) -> RealTensor:
        terms = [ct.rsum(ct.mul(t, w)) for t, w in zip(_planes_as_tensors(y), planes)]
        total = terms[0]
        for t in terms[1:]:
            total = ct.add(total, t)
        return total

    return f


def _planes_as_tensors(y):
    if isinstance(y, ComplexTensor):
        return [ct.real_part(y), ct.imag_part(y)]
    return [y]


def module_case(module, x: ComplexTensor, rng, include_input: bool = True) -> Case:
    proj = project(module(x), rng)
    params = module.parameters() + ([x] if include_input else [])
    return Case(lambda: proj(module(x)), params)


def fn_case(fn, inputs, rng) -> Case:
    proj = project(fn(*inputs), rng)
    return Case(lambda: proj(fn(*inputs)), list(inputs))


def _toy(**kw) -> D2FormerConfig:
    # 64-point FFT keeps F small enough for full element sweeps
    return D2FormerConfig.toy(F=33, fft_size=64, window_len=64, hop=16, **kw)


def _nonzero_affine(module, rng):
    """Give norm affines and biases non-default values so their gradients are exercised."""
    for name, p in module.named_parameters():
        if name.endswith("gamma") or name.endswith("beta") or name.endswith("bias") or name.endswith("pos_bias"):
            for plane in p.planes:
                plane += 0.1 * rng.standard_normal(plane.shape)
    return module


def _conv(rng):
    m = ComplexConv2d(2, 3, (2, 3), stride=(1, 2), dilation=(2, 1), padding=((2, 0), (1, 1)), rng=rng)
    return module_case(_nonzero_affine(m, rng), _cz(rng, (2, 2, 5, 7)), rng)


def _conv_t(rng):
    m = ComplexConvTranspose2d(3, 2, (1, 3), stride=(1, 2), padding=((0, 0), (1, 1)), rng=rng)
    return module_case(_nonzero_affine(m, rng), _cz(rng, (2, 3, 4, 4)), rng)


def _norm(rng):
    return module_case(_nonzero_affine(ComplexInstanceNorm(3), rng), _cz(rng, (2, 3, 4, 5)), rng)


def _prelu(rng):
    return module_case(ComplexPReLU(3), _cz(rng, (2, 3, 4, 5)), rng)


def _linear(rng):
    return module_case(_nonzero_affine(ComplexLinear(4, 3, rng=rng), rng), _cz(rng, (2, 5, 4)), rng)


def _cfsmn(rng):
    return module_case(CFSMN(3, lookback=2, lookahead=3, rng=rng), _cz(rng, (2, 9, 3)), rng)


def _activations(rng):
    return fn_case(lambda z: complex_tanh(complex_leaky_relu(z)), [_cz(rng, (3, 7))], rng)


def _attention(rng):
    B, H, L, d = 2, 2, 5, 3
    rel = RealTensor(rng.standard_normal((H, 2 * L - 1, d)), requires_grad=True)
    ins = [_cz(rng, (B, H, L, d)) for _ in range(4)]
    return fn_case(lambda q, k, v, pq, r: complex_attention(q, k, v, pq, r), ins + [rel], rng)


def _mhsa(rng):
    m = _nonzero_affine(ComplexMultiHeadAttention(4, heads=2, rng=rng), rng)
    return module_case(m, _cz(rng, (2, 6, 4)), rng)


def _conformer(rng):
    m = _nonzero_affine(ComplexConformer(4, heads=2, ffn_mult=2, conv_kernel=3, rng=rng), rng)
    return module_case(m, _cz(rng, (2, 6, 4)), rng)


def _dual_path(rng):
    m = _nonzero_affine(DualPathConformer(4, heads=1, ffn_mult=2, conv_kernel=3, rng=rng), rng)
    return module_case(m, _cz(rng, (1, 4, 5, 3)), rng)


def _dpblock(rng):
    m = _nonzero_affine(DPBlock(3, 2, (2, 3), lookback=2, lookahead=2, rng=rng), rng)
    return module_case(m, _cz(rng, (1, 3, 5, 6)), rng)


def _encoder(rng):
    cfg = _toy(C=2, dilations=(1, 2), concat_blocks=1)
    m = _nonzero_affine(Encoder(cfg, rng=rng), rng)
    return module_case(m, _cz(rng, (1, 1, 4, cfg.F)), rng, include_input=False)


def _decoders(rng):
    cfg = _toy(C=2, dilations=(1,), concat_blocks=1)
    mask, spec = MaskingDecoder(cfg, rng=rng), SpectralDecoder(cfg, rng=rng)
    _nonzero_affine(mask, rng), _nonzero_affine(spec, rng)
    x = _cz(rng, (1, 2, 3, cfg.F2))

    def both(z):
        return ct.add(mask(z), spec(z))

    proj = project(both(x), rng)
    return Case(lambda: proj(both(x)), mask.parameters() + spec.parameters() + [x])


def _istft(rng):
    cfg = StftConfig(16, 4, 16)
    S = _cz(rng, (2, 6, 9))
    w = rng.standard_normal((2, 20))
    return Case(lambda: ct.rsum(ct.mul(istft_tensor(S, cfg, 20), w)), [S])


def _end_to_end(rng):
    from .training import Batch, Trainer

    cfg = _toy(dilations=(1, 2))
    model = _nonzero_affine(D2Former(cfg, seed=int(rng.integers(1 << 31))), rng)
    n = 16 * 12
    clean = rng.standard_normal((1, n)) * 0.5
    noisy = clean + 0.3 * rng.standard_normal((1, n))
    batch = Batch(clean, noisy, np.array([n]))
    trainer = Trainer(model)
    return Case(lambda: trainer._forward_loss(batch)["loss"], model.parameters())


REGISTRY: dict[str, Callable[[np.random.Generator], Case]] = {
    "conv2d": _conv,
    "conv_transpose2d": _conv_t,
    "instance_norm": _norm,
    "prelu": _prelu,
    "leaky_relu_tanh": _activations,
    "linear": _linear,
    "cfsmn": _cfsmn,
    "attention": _attention,
    "mhsa": _mhsa,
    "conformer": _conformer,
    "dual_path_conformer": _dual_path,
    "dpblock": _dpblock,
    "encoder": _encoder,
    "decoders": _decoders,
    "istft": _istft,
    "end_to_end": _end_to_end,
}

# components with many parameters are checked on a per-plane sample
SAMPLED = {"conformer": 40, "dual_path_conformer": 40, "encoder": 40, "decoders": 40, "end_to_end": 8}


def run(names=None, dtype=np.float64, seed: int = 0, log=None) -> list[Report]:
    names = list(REGISTRY) if names is None else list(names)
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown gradcheck components: {unknown}")
    step = 1e-5 if np.dtype(dtype) == np.float64 else 1e-2
    reports = []
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        with ct.precision(dtype):
            case = REGISTRY[name](rng)
            err = ct.finite_diff_check(case.loss, case.params, step=step,
                                       max_elements=SAMPLED.get(name), rng=rng)
        rep = Report(name, err, time.perf_counter() - t0)
        reports.append(rep)
        if log:
            log(f"{name:22s} max_rel_err={rep.error:.3e} {'ok' if rep.ok else 'FAIL'} ({rep.seconds:.1f}s)")
    return reports
