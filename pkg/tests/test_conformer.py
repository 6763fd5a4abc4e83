import numpy as np
import pytest

from d2former import ctensor as ct
from d2former.conformer import (ComplexConformer, ConformerStack, DualPathConformer, dual_path_block,
                                from_freq_view, from_time_view, to_freq_view, to_time_view)
from d2former.ctensor import ComplexTensor

from conftest import cz


def zero_sublayer_outputs(module):
    # zeroing the last projection of every sublayer forces each residual branch to 0
    for cf in [m for m in _walk(module) if isinstance(m, ComplexConformer)]:
        for lin in (cf.ffn1.down, cf.ffn2.down, cf.mhsa.attn.w_o, cf.conv.pw_out):
            for p in lin.parameters():
                for plane in p.planes:
                    plane[...] = 0


def _walk(m):
    yield m
    for v in vars(m).values():
        for item in (v if isinstance(v, list) else [v]):
            if hasattr(item, "named_parameters"):
                yield from _walk(item)


def test_zero_sublayers_give_identity(rng):
    m = ConformerStack(4, 2, heads=2, rng=rng)
    zero_sublayer_outputs(m)
    x = cz(rng, (1, 4, 5, 3))
    np.testing.assert_array_equal(m(x).numpy(), x.numpy())


def test_length_one_is_finite(rng):
    out = ComplexConformer(4, heads=2, rng=rng)(cz(rng, (2, 1, 4)))
    assert out.shape == (2, 1, 4)
    assert np.all(np.isfinite(out.re)) and np.all(np.isfinite(out.im))


@pytest.mark.parametrize("T", [1, 7, 320])
def test_dual_path_shape(rng, T):
    x = cz(rng, (1, 4, T, 3))
    assert DualPathConformer(4, heads=1, rng=rng)(x).shape == x.shape


def test_views_are_lossless(rng):
    x = cz(rng, (2, 3, 4, 5))
    np.testing.assert_array_equal(from_time_view(to_time_view(x), x.shape).numpy(), x.numpy())
    np.testing.assert_array_equal(from_freq_view(to_freq_view(x), x.shape).numpy(), x.numpy())
    assert to_time_view(x).shape == (10, 4, 3) and to_freq_view(x).shape == (8, 5, 3)


def test_identity_conformers_identity_block(rng):
    x = cz(rng, (2, 3, 4, 5))
    np.testing.assert_array_equal(dual_path_block(x, lambda z: z, lambda z: z).numpy(), x.numpy())


def test_stack_of_one_equals_block(f64, rng):
    stack = ConformerStack(4, 1, heads=1, rng=np.random.default_rng(5))
    block = DualPathConformer(4, heads=1, rng=np.random.default_rng(5))
    x = cz(rng, (1, 4, 3, 4))
    np.testing.assert_array_equal(stack(x).numpy(), block(x).numpy())


def test_stack_needs_a_block():
    with pytest.raises(ct.ContractError):
        ConformerStack(4, 0)



def test_time_path_is_per_bin(f64, rng):
    cf = ComplexConformer(4, heads=2, rng=rng)
    x = cz(rng, (1, 4, 6, 5))
    out = from_time_view(cf(to_time_view(x)), x.shape).numpy()
    xp = x.numpy().copy()
    xp[..., 2] = 0
    xz = ComplexTensor(xp)
    outp = from_time_view(cf(to_time_view(xz)), x.shape).numpy()
    others = [f for f in range(5) if f != 2]
    assert np.max(np.abs(outp[..., others] - out[..., others])) <= 1e-6
    assert np.max(np.abs(outp[..., 2] - out[..., 2])) > 1e-3


def test_freq_path_is_per_frame(f64, rng):
    cf = ComplexConformer(4, heads=2, rng=rng)
    x = cz(rng, (1, 4, 6, 5))
    out = from_freq_view(cf(to_freq_view(x)), x.shape).numpy()
    xp = x.numpy().copy()
    xp[:, :, 3] = 0
    outp = from_freq_view(cf(to_freq_view(ComplexTensor(xp))), x.shape).numpy()
    others = [t for t in range(6) if t != 3]
    assert np.max(np.abs(outp[:, :, others] - out[:, :, others])) <= 1e-6


def test_dual_path_gradients(f64, rng):
    m = DualPathConformer(4, heads=1, ffn_mult=2, rng=rng)
    x = cz(rng, (1, 4, 3, 5), grad=True)
    w = rng.standard_normal((1, 4, 3, 5))
    loss = lambda: ct.rsum(ct.mul(ct.real_part(m(x)), w)) + ct.rsum(ct.mul(ct.imag_part(m(x)), w))
    assert ct.finite_diff_check(loss, m.parameters() + [x], step=1e-5, max_elements=10) <= 1e-4
