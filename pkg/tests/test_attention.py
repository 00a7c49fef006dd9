"""Attention tests against a brute-force scalar-loop oracle."""
import math

import numpy as np
import numpy.testing as npt
import pytest

import seqpose.tensor as T
from seqpose.attention import (AttentionParams, CapacityError, EncoderBlockParams,
                               encoder_block_forward, multi_head_attention,
                               scaled_dot_product_attention)
from seqpose.tensor import DimensionError, Tensor, gradcheck

F64 = np.float64


def t64(x, rg=False):
    return Tensor(np.asarray(x, dtype=F64), requires_grad=rg)


def sdpa_oracle(q, k, v, scale=None):
    """Pure-python scalar-loop re-implementation of one attention head."""
    n, dk = q.shape
    m, dv = v.shape
    if scale is None:
        scale = 1.0 / math.sqrt(dk)
    out = np.zeros((n, dv))
    for i in range(n):
        scores = []
        for j in range(m):
            s = 0.0
            for d in range(dk):
                s += q[i, d] * k[j, d]
            scores.append(s * scale)
        mx = max(scores)
        exps = [math.exp(s - mx) for s in scores]
        z = sum(exps)
        for j in range(m):
            wji = exps[j] / z
            for d in range(dv):
                out[i, d] += wji * v[j, d]
    return out


def test_sdpa_matches_scalar_oracle():
    rng = np.random.default_rng(21)
    q = rng.standard_normal((3, 4))
    k = rng.standard_normal((3, 4))
    v = rng.standard_normal((3, 4))
    got = scaled_dot_product_attention(t64(q), t64(k), t64(v)).numpy()
    npt.assert_allclose(got, sdpa_oracle(q, k, v), atol=1e-6)


def test_attention_weights_are_a_distribution():
    rng = np.random.default_rng(22)
    q, k, v = (rng.standard_normal((4, 5)) for _ in range(3))
    _, w = scaled_dot_product_attention(t64(q), t64(k), t64(v), return_weights=True)
    w = w.numpy()
    assert (w >= 0).all()
    npt.assert_allclose(w.sum(axis=1), np.ones(4), rtol=1e-12)


def test_output_rows_in_convex_hull_of_values():
    rng = np.random.default_rng(23)
    q, k = rng.standard_normal((5, 3)), rng.standard_normal((6, 3))
    v = rng.standard_normal((6, 2))
    out = scaled_dot_product_attention(t64(q), t64(k), t64(v)).numpy()
    assert (out <= v.max(axis=0) + 1e-12).all()
    assert (out >= v.min(axis=0) - 1e-12).all()


def test_identical_keys_get_equal_weights():
    q = t64([[1.0, 2.0]])
    k = t64([[0.3, -0.7], [0.3, -0.7], [1.0, 0.0]])
    v = t64(np.eye(3))
    _, w = scaled_dot_product_attention(q, k, v, return_weights=True)
    w = w.numpy()
    npt.assert_allclose(w[0, 0], w[0, 1], rtol=1e-12)


def test_scale_factor_matters():
    rng = np.random.default_rng(24)
    q, k, v = (rng.standard_normal((3, 9)) for _ in range(3))
    default = scaled_dot_product_attention(t64(q), t64(k), t64(v)).numpy()
    unscaled = scaled_dot_product_attention(t64(q), t64(k), t64(v), scale=1.0).numpy()
    explicit = scaled_dot_product_attention(t64(q), t64(k), t64(v), scale=1.0 / 3.0).numpy()
    assert np.abs(default - unscaled).max() > 1e-6
    npt.assert_allclose(default, explicit, rtol=1e-12)


def test_length_masking_equals_truncation():
    rng = np.random.default_rng(25)
    q = rng.standard_normal((4, 3))
    k = rng.standard_normal((6, 3))
    v = rng.standard_normal((6, 2))
    masked = scaled_dot_product_attention(t64(q), t64(k), t64(v), length=4).numpy()
    trunc = scaled_dot_product_attention(t64(q), t64(k[:4]), t64(v[:4])).numpy()
    npt.assert_allclose(masked, trunc, atol=1e-9)


def test_sdpa_shape_errors():
    with pytest.raises(DimensionError):
        scaled_dot_product_attention(t64(np.zeros((2, 3))), t64(np.zeros((2, 4))),
                                     t64(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        scaled_dot_product_attention(t64(np.zeros((2, 3))), t64(np.zeros((4, 3))),
                                     t64(np.zeros((5, 3))))


# ------------------------------------------------------------ multi-head

def mha_oracle(x, params):
    cat = np.concatenate(
        [sdpa_oracle(x @ wq.numpy(), x @ wk.numpy(), x @ wv.numpy())
         for wq, wk, wv in zip(params.wq, params.wk, params.wv)], axis=1)
    return cat @ params.w_out.numpy()


def test_multi_head_matches_scalar_oracle():
    rng = np.random.default_rng(26)
    params = AttentionParams.init(rng, f=8, heads=2, dtype=F64)
    x = rng.standard_normal((5, 8))
    got = multi_head_attention(t64(x), params).numpy()
    npt.assert_allclose(got, mha_oracle(x, params), atol=1e-6)


def test_single_head_reduces_to_sdpa_projection():
    rng = np.random.default_rng(27)
    params = AttentionParams.init(rng, f=6, heads=1, dtype=F64)
    x = t64(rng.standard_normal((4, 6)))
    got = multi_head_attention(x, params).numpy()
    one = scaled_dot_product_attention(x @ params.wq[0], x @ params.wk[0], x @ params.wv[0])
    npt.assert_allclose(got, (one @ params.w_out).numpy(), rtol=1e-12)


def test_head_dim_defaults_partition_embed_dim():
    rng = np.random.default_rng(28)
    params = AttentionParams.init(rng, f=64, heads=8)
    assert params.wq[0].shape == (64, 8)
    assert params.wv[0].shape == (64, 8)
    assert params.w_out.shape == (64, 64)
    with pytest.raises(T.ContractError):
        AttentionParams.init(rng, f=10, heads=3)


def test_mha_input_dim_check():
    rng = np.random.default_rng(29)
    params = AttentionParams.init(rng, f=8, heads=2, dtype=F64)
    with pytest.raises(DimensionError):
        multi_head_attention(t64(np.zeros((3, 7))), params)


def test_attention_gradcheck():
    rng = np.random.default_rng(30)
    params = AttentionParams.init(rng, f=6, heads=2, dtype=F64)
    x = t64(rng.standard_normal((4, 6)), rg=True)
    names = dict(params.named_params())
    names["x"] = x
    rep = gradcheck(lambda: T.reduce_sum(T.square(multi_head_attention(x, params))), names)
    assert max(rep.values()) < 1e-4, rep


# ---------------------------------------------------------- encoder block

def test_encoder_block_preserves_shape():
    rng = np.random.default_rng(31)
    blk = EncoderBlockParams.init(rng, f=16, heads=4, n_max=8, dtype=F64)
    x = t64(rng.standard_normal((5, 16)))
    assert encoder_block_forward(x, blk).shape == (5, 16)


def test_encoder_block_default_ff_dim_doubles_embed():
    rng = np.random.default_rng(32)
    blk = EncoderBlockParams.init(rng, f=12, heads=2, n_max=4)
    assert blk.ff_w1.shape == (12, 24)


def test_sequence_longer_than_table_is_capacity_error():
    rng = np.random.default_rng(33)
    blk = EncoderBlockParams.init(rng, f=8, heads=2, n_max=3, dtype=F64)
    x = t64(np.zeros((5, 8)))
    with pytest.raises(CapacityError):
        encoder_block_forward(x, blk)


def test_permutation_equivariance_without_positions():
    rng = np.random.default_rng(34)
    blk = EncoderBlockParams.init(rng, f=10, heads=2, n_max=6, dtype=F64, use_pos=False)
    x = rng.standard_normal((6, 10))
    perm = rng.permutation(6)
    y = encoder_block_forward(t64(x), blk).numpy()
    y_perm = encoder_block_forward(t64(x[perm]), blk).numpy()
    npt.assert_allclose(y_perm, y[perm], atol=1e-6)


def test_positions_break_permutation_equivariance():
    rng = np.random.default_rng(35)
    blk = EncoderBlockParams.init(rng, f=10, heads=2, n_max=6, dtype=F64)
    # make the table large enough to matter
    blk.pos_table.data[:] = rng.standard_normal(blk.pos_table.shape)
    x = rng.standard_normal((6, 10))
    perm = np.roll(np.arange(6), 1)
    y = encoder_block_forward(t64(x), blk).numpy()
    y_perm = encoder_block_forward(t64(x[perm]), blk).numpy()
    assert np.abs(y_perm - y[perm]).max() > 1e-4


def test_explicit_positions_select_table_rows():
    rng = np.random.default_rng(36)
    blk = EncoderBlockParams.init(rng, f=8, heads=2, n_max=10, dtype=F64)
    x = rng.standard_normal((3, 8))
    default = encoder_block_forward(t64(x), blk, positions=[0, 1, 2]).numpy()
    implicit = encoder_block_forward(t64(x), blk).numpy()
    npt.assert_allclose(default, implicit, rtol=1e-12)
    other = encoder_block_forward(t64(x), blk, positions=[7, 8, 9]).numpy()
    assert np.abs(other - default).max() > 1e-6


def test_encoder_block_gradcheck():
    rng = np.random.default_rng(37)
    blk = EncoderBlockParams.init(rng, f=6, heads=2, n_max=4, dtype=F64)
    x = t64(rng.standard_normal((3, 6)), rg=True)
    names = dict(blk.named_params())
    names["x"] = x
    rep = gradcheck(lambda: T.reduce_sum(T.square(encoder_block_forward(x, blk))), names)
    assert max(rep.values()) < 1e-4, rep
