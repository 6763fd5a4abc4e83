import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2former import ctensor as ct
from d2former.ctensor import ComplexTensor, DimensionError, RealTensor
from d2former.layers import (CFSMN, ComplexConv2d, ComplexConvTranspose2d, ComplexInstanceNorm, ComplexLinear,
                             ComplexPReLU, complex_apply, complex_conv2d, complex_conv_transpose2d,
                             complex_leaky_relu, complex_tanh, conv_output_size, fsmn_memory, instance_norm,
                             instance_norm_reference)

from conftest import cz


def conv_oracle(x, w, b, stride=(1, 1), dilation=(1, 1)):
    """Direct complex-arithmetic convolution, one output element at a time."""
    B, Ci, H, W = x.shape
    Co, _, kh, kw = w.shape
    Ho = (H - dilation[0] * (kh - 1) - 1) // stride[0] + 1
    Wo = (W - dilation[1] * (kw - 1) - 1) // stride[1] + 1
    out = np.zeros((B, Co, Ho, Wo), complex)
    for n in range(B):
        for o in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(Ci):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, c, u, v] * x[n, c, i * stride[0] + u * dilation[0],
                                                         j * stride[1] + v * dilation[1]]
                    out[n, o, i, j] = acc
    return out


def test_complex_apply_rules(rng):
    z = cz(rng, (4,))
    zero = lambda x: ct.mul(x, 0.0)
    ident = lambda x: x
    np.testing.assert_allclose(complex_apply(ident, zero, z).numpy(), z.numpy())
    a, b = 0.7, -1.3
    out = complex_apply(lambda x: ct.mul(x, a), lambda x: ct.mul(x, b), z)
    np.testing.assert_allclose(out.numpy(), (a + 1j * b) * z.numpy(), atol=1e-6)


def test_complex_apply_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        complex_apply(lambda x: x, lambda x: ct.rsum(x), cz(rng, (3,)))


@pytest.mark.parametrize("stride,dilation", [((1, 1), (1, 1)), ((1, 2), (1, 1)), ((2, 1), (2, 1))])
def test_conv_matches_loop_oracle(f64, rng, stride, dilation):
    x, w, b = cz(rng, (1, 2, 6, 6)), cz(rng, (3, 2, 2, 2)), cz(rng, (3,))
    got = complex_conv2d(x, w, b, stride, dilation).numpy()
    np.testing.assert_allclose(got, conv_oracle(x.numpy(), w.numpy(), b.numpy(), stride, dilation), atol=1e-10)


def test_identity_kernel(rng):
    x = cz(rng, (2, 1, 4, 5))
    w = ComplexTensor(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
    np.testing.assert_allclose(complex_conv2d(x, w, None).numpy(), x.numpy())


def test_dilation_receptive_field():
    # k_t = 2 at dilation 8 spans 9 frames: output frame 0 sees input frames 0 and 8 only
    w = ComplexTensor(np.ones((1, 1, 2, 1)))
    x = np.zeros((1, 1, 9, 1))
    x[0, 0, 8, 0] = 1.0
    assert complex_conv2d(ComplexTensor(x), w, None, dilation=(8, 1)).shape[2] == 1
    assert complex_conv2d(ComplexTensor(x), w, None, dilation=(8, 1)).re[0, 0, 0, 0] == 1.0
    assert conv_output_size(9, 2, 1, 8) == 1


def test_conv_too_small_input(rng):
    with pytest.raises(DimensionError):
        complex_conv2d(cz(rng, (1, 1, 2, 2)), cz(rng, (1, 1, 3, 3)), None)


def test_conv_transpose_identity(rng):
    x = cz(rng, (1, 2, 3, 4))
    w = ComplexTensor(np.eye(2).reshape(2, 2, 1, 1))
    np.testing.assert_allclose(complex_conv_transpose2d(x, w, None).numpy(), x.numpy())


def test_conv_transpose_upsamples_101_to_201(rng):
    m = ComplexConvTranspose2d(2, 2, (1, 3), stride=(1, 2), padding=((0, 0), (1, 1)), rng=rng)
    assert m.output_size(5, 101) == (5, 201)
    assert m(cz(rng, (1, 2, 5, 101))).shape == (1, 2, 5, 201)


@pytest.mark.parametrize("stride", [(1, 1), (1, 2), (2, 2)])
@pytest.mark.parametrize("real_kernel", [True, False])
def test_conv_transpose_is_adjoint(f64, rng, stride, real_kernel):
    # <conv(x; w), y> = <x, conv_T(y; conj w)> under sum(a * conj(b)); conj w = w for real kernels
    w = cz(rng, (3, 2, 2, 3))
    if real_kernel:
        w.im[:] = 0
    x = cz(rng, (1, 2, 7, 9))
    y = complex_conv2d(x, w, None, stride)
    yy = cz(rng, y.shape)
    # the transposed layer takes the forward kernel as is: [C_in of transpose = C_out of conv, ...]
    xt = complex_conv_transpose2d(yy, ct.conj(w), None, stride)
    xt_np = xt.numpy()
    pad = [(0, 0)] * 2 + [(0, x.shape[i] - xt_np.shape[i]) for i in (2, 3)]
    lhs = np.sum(y.numpy() * np.conj(yy.numpy()))
    rhs = np.sum(x.numpy() * np.conj(np.pad(xt_np, pad)))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


@given(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_conv_and_linear_are_linear(a, b):
    rng = np.random.default_rng(0)
    with ct.precision(np.float64):
        conv = ComplexConv2d(2, 2, (2, 2), bias=False, rng=rng)
        lin = ComplexLinear(3, 2, bias=False, rng=rng)
        for m, shape in ((conv, (1, 2, 4, 4)), (lin, (2, 3))):
            x, y = cz(rng, shape), cz(rng, shape)
            lhs = m(ComplexTensor(a * x.numpy() + b * y.numpy())).numpy()
            rhs = a * m(x).numpy() + b * m(y).numpy()
            np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_linear_scalar_oracle(f64, rng):
    m = ComplexLinear(3, 2, rng=rng)
    m.bias.re[:] = rng.standard_normal(2)
    x = cz(rng, (4, 3))
    want = x.numpy() @ m.weight.numpy() + m.bias.numpy()
    np.testing.assert_allclose(m(x).numpy(), want, atol=1e-12)


def test_instance_norm_moments(rng):
    z = cz(rng, (2, 3, 5, 7), scale=4.0)
    out = ComplexInstanceNorm(3)(z)
    for p in out.planes:
        assert np.max(np.abs(p.mean(axis=(2, 3)))) <= 1e-5
        var = p.var(axis=(2, 3))
        assert np.all((var > 0.99) & (var < 1.01))


def test_instance_norm_constant_input():
    z = ComplexTensor(np.full((1, 2, 3, 3), 5.0), np.full((1, 2, 3, 3), -2.0))
    assert np.max(np.abs(ComplexInstanceNorm(2)(z).numpy())) == 0.0


def test_instance_norm_beta_shift(f64, rng):
    z = cz(rng, (1, 2, 4, 4))
    m = ComplexInstanceNorm(2)
    base = m(z).numpy()
    m.beta.re[:] = [0.5, -1.0]
    m.beta.im[:] = [2.0, 0.25]
    np.testing.assert_allclose(m(z).numpy() - base, np.broadcast_to(m.beta.numpy()[None, :, None, None], base.shape),
                               atol=1e-12)


@pytest.mark.parametrize("shape,axes,ch", [((2, 3, 4, 5), (2, 3), 1), ((3, 6, 4), (1,), 2)])
def test_fused_norm_matches_reference(f64, rng, shape, axes, ch):
    z = cz(rng, shape)
    g, b = cz(rng, (shape[ch],)), cz(rng, (shape[ch],))
    np.testing.assert_allclose(instance_norm(z, g, b, axes, ch).numpy(),
                               instance_norm_reference(z, g, b, axes, ch).numpy(), atol=1e-12)


def test_activations():
    big = ComplexTensor(np.array([1e4, -1e4, 30.0]), np.array([-1e4, 50.0, 1e3]))
    t = complex_tanh(big)
    assert np.all(np.abs(t.re) < 1) and np.all(np.abs(t.im) < 1)
    z = ComplexTensor(np.array([-1.0]), np.array([-1.0]))
    np.testing.assert_allclose(complex_leaky_relu(z).numpy(), [-0.01 - 0.01j])
    pos = ComplexTensor(np.ones((1, 2, 3)), np.full((1, 2, 3), 2.0))
    np.testing.assert_array_equal(ComplexPReLU(2)(pos).numpy(), pos.numpy())


def test_prelu_slope_init_and_negative_side():
    m = ComplexPReLU(2)
    np.testing.assert_allclose(m.slope.data, 0.25)
    z = ComplexTensor(-np.ones((1, 2, 1)), np.ones((1, 2, 1)))
    np.testing.assert_allclose(m(z).numpy(), np.full((1, 2, 1), -0.25 + 1j))


def fsmn_oracle(g, taps, lookback):
    *lead, F, C = g.shape
    out = np.zeros_like(g)
    for f in range(F):
        for k in range(taps.shape[1]):
            s = f + k - lookback
            if 0 <= s < F:
                out[..., f, :] += taps[:, k] * g[..., s, :]
    return out


def test_fsmn_loop_oracle(f64, rng):
    g, taps = cz(rng, (2, 3, 11, 4)), cz(rng, (4, 7))
    np.testing.assert_allclose(fsmn_memory(g, taps, 2).numpy(), fsmn_oracle(g.numpy(), taps.numpy(), 2), atol=1e-12)


def test_cfsmn_zero_taps_and_doubling(f64, rng):
    m = CFSMN(3, lookback=8, lookahead=8, rng=rng)
    h = cz(rng, (1, 2, 10, 3))
    m.taps.re[:] = 0
    m.taps.im[:] = 0
    np.testing.assert_allclose(m(h).numpy(), h.numpy())
    m.taps.re[:, 8] = 1.0
    m.proj.weight.re[:] = np.eye(3)
    m.proj.weight.im[:] = 0
    m.proj.bias.re[:] = 0
    m.proj.bias.im[:] = 0
    np.testing.assert_allclose(m(h).numpy(), 2 * h.numpy(), atol=1e-12)


@pytest.mark.parametrize("make,shape", [
    (lambda r: ComplexConv2d(2, 2, (2, 3), dilation=(2, 1), padding=((2, 0), (1, 1)), rng=r), (1, 2, 4, 5)),
    (lambda r: ComplexConvTranspose2d(2, 2, (1, 3), stride=(1, 2), padding=((0, 0), (1, 1)), rng=r), (1, 2, 3, 4)),
    (lambda r: ComplexInstanceNorm(2), (2, 2, 3, 4)),
    (lambda r: ComplexPReLU(2), (1, 2, 3, 3)),
    (lambda r: ComplexLinear(3, 2, rng=r), (2, 4, 3)),
    (lambda r: CFSMN(2, 2, 2, rng=r), (1, 2, 6, 2)),
])
def test_layer_gradients(f64, rng, make, shape):
    m = make(rng)
    for p in m.parameters():
        for plane in p.planes:
            plane += 0.1 * rng.standard_normal(plane.shape)
    x = cz(rng, shape, grad=True)
    w = [rng.standard_normal(m(x).shape) for _ in range(2)]
    loss = lambda: ct.rsum(ct.mul(ct.real_part(m(x)), w[0])) + ct.rsum(ct.mul(ct.imag_part(m(x)), w[1]))
    assert ct.finite_diff_check(loss, m.parameters() + [x], step=1e-6) <= 1e-4
