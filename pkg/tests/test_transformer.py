import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from costtrack import tensor as T
from costtrack.tensor import ShapeError, Tensor
from costtrack.transformer import (AttentionConfig, EncoderBlock, MultiHeadAttention, encoder_forward,
                                   multi_head_attention, scaled_dot_attention, sine_positional_encoding,
                                   spatial_sine_encoding)
import oracles
from conftest import grad_check


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(1, 3))
    out = scaled_dot_attention(rng.normal(size=(4, 2)), rng.normal(size=(1, 2)), v).data
    np.testing.assert_allclose(out, np.tile(v, (4, 1)), atol=1e-15)


def test_attention_zero_query_is_mean():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(5, 3))
    out = scaled_dot_attention(np.zeros((2, 4)), rng.normal(size=(5, 4)), v).data
    np.testing.assert_allclose(out, np.tile(v.mean(0), (2, 1)), atol=1e-14)


def test_attention_two_key_worked_case():
    # d_k = 1 so the scaled logits are q*k: [0, ln 2]
    v = np.array([[1.0, 0.0], [4.0, 3.0]])
    out, w = scaled_dot_attention(np.array([[1.0]]), np.array([[0.0], [math.log(2.0)]]), v, return_weights=True)
    np.testing.assert_allclose(w.data, [[1 / 3, 2 / 3]], atol=1e-15)
    np.testing.assert_allclose(out.data, [(v[0] + 2 * v[1]) / 3], atol=1e-15)


def test_attention_dk_mismatch():
    with pytest.raises(ShapeError):
        scaled_dot_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-20, 20))
def test_attention_weights_distribution_and_shift_invariance(seed, shift):
    r = np.random.default_rng(seed)
    q, k, v = r.normal(size=(3, 4)), r.normal(size=(6, 4)), r.normal(size=(6, 2))
    _, w = scaled_dot_attention(q, k, v, return_weights=True)
    assert np.all(w.data >= 0)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)
    _, w2 = scaled_dot_attention(q, k, v, bias=np.full((3, 6), shift), return_weights=True)
    np.testing.assert_allclose(w.data, w2.data, atol=1e-12)


def test_mha_one_head_reduces_to_attention_then_output_projection():
    rng = np.random.default_rng(2)
    m = MultiHeadAttention(4, 1, rng)
    x, y = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    q = x @ m.w_q.weight.data + m.w_q.bias.data
    k = y @ m.w_k.weight.data + m.w_k.bias.data
    v = y @ m.w_v.weight.data + m.w_v.bias.data
    ref = scaled_dot_attention(q, k, v).data @ m.w_o.weight.data + m.w_o.bias.data
    np.testing.assert_allclose(multi_head_attention(x, y, m).data, ref, atol=1e-12)


def test_mha_two_heads_against_straight_line_oracle():
    rng = np.random.default_rng(3)
    m = MultiHeadAttention(4, 2, rng)
    for lin in (m.w_q, m.w_k, m.w_v, m.w_o):
        lin.bias.data[:] = rng.normal(size=4)
    x, y = rng.normal(size=(3, 4)), rng.normal(size=(7, 4))
    out = multi_head_attention(x, y, m).data
    assert out.shape == (3, 4)
    assert np.max(np.abs(out - oracles.mha(x, y, y, m))) < 1e-9


def test_mha_width_mismatch():
    m = MultiHeadAttention(4, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        multi_head_attention(np.zeros((2, 4)), np.zeros((2, 3)), m)


def _block(d=8, h=2, seed=0):
    blk = EncoderBlock(AttentionConfig(d, h, 16, dropout=0.1), np.random.default_rng(seed))
    blk.eval()
    return blk


def test_encoder_matches_oracle_self_and_cross_with_positions_and_mask():
    rng = np.random.default_rng(4)
    blk = _block()
    blk.norm1.gamma.data[:] = rng.normal(size=8)
    blk.norm2.beta.data[:] = rng.normal(size=8)
    x, z = rng.normal(size=(5, 8)), rng.normal(size=(3, 8))
    px, pz = sine_positional_encoding(5, 8), sine_positional_encoding(3, 8)
    mask = np.array([1, 1, 1, 0, 0])
    cases = [
        (encoder_forward(x, None, blk).data, oracles.encoder(x, blk)),
        (encoder_forward(x, None, blk, pos_q=px).data, oracles.encoder(x, blk, pos_q=px)),
        (encoder_forward(x, z, blk, pos_q=px, pos_kv=pz).data, oracles.encoder(x, blk, z, px, pz)),
        (encoder_forward(x, None, blk, key_mask=mask).data, oracles.encoder(x, blk, mask=mask)),
    ]
    for got, ref in cases:
        assert got.shape == x.shape
        assert np.max(np.abs(got - ref)) < 1e-9


def test_encoder_zero_weights_is_double_layer_norm():
    rng = np.random.default_rng(5)
    blk = _block()
    for p in (blk.attn.w_o.weight, blk.attn.w_o.bias, blk.ffn.fc2.weight, blk.ffn.fc2.bias):
        p.data[:] = 0.0
    x = rng.normal(size=(4, 8))
    g, b = np.ones(8), np.zeros(8)
    np.testing.assert_allclose(encoder_forward(x, None, blk).data, oracles.ln(oracles.ln(x, g, b), g, b), atol=1e-12)


def test_self_attention_permutation_equivariant():
    rng = np.random.default_rng(6)
    blk = _block()
    x = rng.normal(size=(6, 8))
    perm = rng.permutation(6)
    np.testing.assert_allclose(encoder_forward(x[perm], None, blk).data, encoder_forward(x, None, blk).data[perm],
                               atol=1e-12)


def test_encoder_batched_equals_per_sample():
    rng = np.random.default_rng(7)
    blk = _block()
    x = rng.normal(size=(3, 5, 8))
    out = encoder_forward(x, None, blk).data
    for i in range(3):
        np.testing.assert_allclose(out[i], encoder_forward(x[i], None, blk).data, atol=1e-12)


def test_encoder_block_gradients():
    rng = np.random.default_rng(8)
    blk = _block(d=4, h=2)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    z = rng.normal(size=(2, 4))
    w = rng.normal(size=(3, 4))
    # a key bias shifts every query's logits by a constant, so its true gradient is zero
    params = [x] + [p for n, p in blk.named_parameters() if n != "attn.w_k.bias"]
    assert grad_check(lambda *ps: (encoder_forward(ps[0], z, blk, pos_q=0.1 * w) * w).sum(), params) < 1e-4
    np.testing.assert_allclose(blk.attn.w_k.bias.grad, 0.0, atol=1e-12)


def test_dropout_active_in_training_only():
    blk = _block()
    x = np.random.default_rng(9).normal(size=(4, 8))
    a = encoder_forward(x, None, blk).data
    blk.train()
    b = encoder_forward(x, None, blk).data
    blk.eval()
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, encoder_forward(x, None, blk).data)


def test_attention_config_validation():
    with pytest.raises(ValueError):
        AttentionConfig(10, 3)
    assert AttentionConfig(256, 8).d_k == 32


def test_sine_encoding_values():
    pe = sine_positional_encoding(6, 8)
    np.testing.assert_array_equal(pe[0], [0, 1] * 4)
    assert pe[1, 0] == pytest.approx(0.8414709848, abs=1e-9)
    assert np.all(np.abs(pe) <= 1)
    np.testing.assert_allclose(pe, oracles.pe_1d(6, 8), atol=1e-12)
    with pytest.raises(ValueError):
        sine_positional_encoding(3, 5)


def test_spatial_encoding_row_and_column_halves():
    pe = spatial_sine_encoding(3, 4, 8)
    assert pe.shape == (12, 8)
    np.testing.assert_allclose(pe, oracles.pe_2d(3, 4, 8), atol=1e-12)
    # tokens in the same row share the row half
    np.testing.assert_array_equal(pe[4, :4], pe[7, :4])
    with pytest.raises(ValueError):
        spatial_sine_encoding(2, 2, 6)
