import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2former import ctensor as ct
from d2former.attention import (ComplexMultiHeadAttention, attention_reference, attention_weights,
                                complex_attention, relative_view, sinusoid_table)
from d2former.ctensor import ComplexTensor, DimensionError, RealTensor

from conftest import cz


def scalar_attention(q, k, v, pq=None, rel=None):
    """Eqs. written out element by element for one head: q, k, v are [L, d] complex."""
    L, d = q.shape
    out = np.zeros_like(v)
    for i in range(L):
        mags = []
        for j in range(L):
            s = sum(q[i, m] * k[j, m] for m in range(d))
            if rel is not None:
                r = rel[i - j + L - 1]
                s += sum(pq[i, m].real * r[m] for m in range(d)) + 1j * sum(pq[i, m].imag * r[m] for m in range(d))
            mags.append(abs(s) / np.sqrt(d))
        e = np.exp(np.array(mags) - max(mags))
        a = e / e.sum()
        for j in range(L):
            out[i] += a[j] * v[j]
    return out


def test_sinusoid_table_is_deterministic_and_centered():
    t = sinusoid_table(5, 6, np.float64)
    assert t.shape == (9, 6)
    np.testing.assert_array_equal(t, sinusoid_table(5, 6, np.float64))
    np.testing.assert_allclose(t[4, 0::2], 0.0)  # offset 0: sin terms vanish
    np.testing.assert_allclose(t[4, 1::2], 1.0)


def test_relative_view_indexing(rng):
    r = rng.standard_normal((2, 7, 3))
    v = relative_view(r, 4)
    for i in range(4):
        for j in range(4):
            np.testing.assert_array_equal(v[:, i, j], r[:, i - j + 3])


@pytest.mark.parametrize("with_rel", [False, True])
def test_matches_scalar_oracle(f64, rng, with_rel):
    L, d = 3, 2
    q, k, v, pq = (cz(rng, (1, 1, L, d)) for _ in range(4))
    rel = RealTensor(rng.standard_normal((1, 2 * L - 1, d))) if with_rel else None
    got = complex_attention(q, k, v, pq if with_rel else None, rel).numpy()[0, 0]
    want = scalar_attention(q.numpy()[0, 0], k.numpy()[0, 0], v.numpy()[0, 0],
                            pq.numpy()[0, 0] if with_rel else None, rel.data[0] if with_rel else None)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_fused_matches_reference(f64, rng):
    q, k, v, pq = (cz(rng, (2, 3, 6, 4)) for _ in range(4))
    rel = RealTensor(rng.standard_normal((3, 11, 4)))
    np.testing.assert_allclose(complex_attention(q, k, v, pq, rel).numpy(),
                               attention_reference(q, k, v, pq, rel).numpy(), atol=1e-12)


def test_single_position_returns_values(rng):
    q, k, v = (cz(rng, (1, 1, 1, 3)) for _ in range(3))
    np.testing.assert_allclose(complex_attention(q, k, v).numpy(), v.numpy(), atol=1e-6)


def test_equal_logits_average_values():
    # q = [1, j]: logits against k0 = [1, 0] and k1 = [0, 1] are 1 and j, equal in magnitude
    q = ComplexTensor(np.array([[[[1.0, 0.0], [1.0, 0.0]]]]), np.array([[[[0.0, 1.0], [0.0, 1.0]]]]))
    k = ComplexTensor(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]))
    v = ComplexTensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), np.array([[[[0.5, 0.0], [0.0, -0.5]]]]))
    out = complex_attention(q, k, v).numpy()[0, 0]
    np.testing.assert_allclose(out, np.tile(v.numpy()[0, 0].mean(axis=0), (2, 1)), atol=1e-6)


@given(st.integers(0, 10_000), st.floats(0, 2 * np.pi))
def test_weights_stochastic_and_phase_invariant(seed, phi):
    rng = np.random.default_rng(seed)
    with ct.precision(np.float64):
        q, k = cz(rng, (2, 5, 4)), cz(rng, (2, 5, 4))
        a = attention_weights(q, k).data
        assert np.all(a >= 0)
        np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-6)
        rot = ComplexTensor(np.exp(1j * phi) * q.numpy())
        assert np.max(np.abs(attention_weights(rot, k).data - a)) <= 1e-6


def test_permutation_equivariance_without_relpos(f64, rng):
    m = ComplexMultiHeadAttention(4, heads=2, relpos=False, rng=rng)
    z = cz(rng, (1, 6, 4))
    perm = rng.permutation(6)
    out = m(z).numpy()
    outp = m(ComplexTensor(z.numpy()[:, perm])).numpy()
    np.testing.assert_allclose(outp, out[:, perm], atol=1e-6)


def test_batch_equivariance(f64, rng):
    m = ComplexMultiHeadAttention(4, heads=2, rng=rng)
    z = cz(rng, (3, 5, 4))
    perm = [2, 0, 1]
    np.testing.assert_allclose(m(ComplexTensor(z.numpy()[perm])).numpy(), m(z).numpy()[perm], atol=1e-12)


def test_identity_projection_and_head_split(f64, rng):
    m = ComplexMultiHeadAttention(4, heads=2, rng=rng)
    for w in (m.w_q, m.w_k, m.w_v):
        w.weight.re[:] = np.eye(4)
        w.weight.im[:] = 0
    z = cz(rng, (1, 3, 4))
    q, k, v = m.qkv(z)
    for t in (q, k, v):
        np.testing.assert_allclose(m.merge_heads(t).numpy(), z.numpy())
    zero = m.qkv(ComplexTensor(np.zeros((1, 3, 4))))
    assert all(not np.any(t.numpy()) for t in zero)


def test_heads_match_unsplit_projection(f64, rng):
    m = ComplexMultiHeadAttention(8, heads=4, rng=rng)
    z = cz(rng, (2, 5, 8))
    q = m.qkv(z)[0].numpy()
    full = z.numpy() @ m.w_q.weight.numpy()
    for h in range(4):
        np.testing.assert_allclose(q[:, h], full[..., 2 * h:2 * h + 2], atol=1e-12)


def test_one_head_equals_single_head_path(f64, rng):
    m = ComplexMultiHeadAttention(4, heads=1, relpos=False, rng=rng)
    z = cz(rng, (2, 5, 4))
    q, k, v = m.qkv(z)
    direct = attention_reference(q, k, v)
    np.testing.assert_allclose(m(z).numpy(), m.w_o(m.merge_heads(direct)).numpy(), atol=1e-12)


def test_full_config_depth():
    m = ComplexMultiHeadAttention(32, heads=4)
    assert m.d_k == 8
    assert m(cz(np.random.default_rng(0), (1, 3, 32))).shape == (1, 3, 32)


def test_bad_shapes(rng):
    with pytest.raises(DimensionError):
        ComplexMultiHeadAttention(6, heads=4)
    with pytest.raises(DimensionError):
        ComplexMultiHeadAttention(4, heads=2)(cz(rng, (1, 3, 5)))
    with pytest.raises(DimensionError):
        complex_attention(cz(rng, (1, 2, 3)), cz(rng, (1, 3, 3)), cz(rng, (1, 2, 3)))


def test_attention_gradients(f64, rng):
    q, k, v, pq = (cz(rng, (2, 2, 4, 3), grad=True) for _ in range(4))
    rel = RealTensor(rng.standard_normal((2, 7, 3)), requires_grad=True)
    w = rng.standard_normal((2, 2, 4, 3))
    loss = lambda: ct.rsum(ct.mul(ct.real_part(complex_attention(q, k, v, pq, rel)), w)) + \
        ct.rsum(ct.mul(ct.imag_part(complex_attention(q, k, v, pq, rel)), w))
    assert ct.finite_diff_check(loss, [q, k, v, pq, rel], step=1e-6) <= 1e-4
