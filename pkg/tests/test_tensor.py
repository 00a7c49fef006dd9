"""Tests for the autodiff tensor engine.

Expected values are either hand-computed closed forms or come from the
central-difference oracle ``fd_grad`` run in float64.
"""
import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

import seqpose.tensor as T
from seqpose.tensor import (ComputationTape, ContractError, DimensionError,
                            NumericError, Tensor, fd_grad, gradcheck,
                            max_rel_error, no_grad, param)

F64 = np.float64


def t64(x, rg=False):
    return Tensor(np.asarray(x, dtype=F64), requires_grad=rg)


# ---------------------------------------------------------------- basics

def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.arange(3)).dtype == np.float32


def test_float64_selectable():
    assert Tensor([1.0], dtype=F64).dtype == F64


def test_shape_size_consistency():
    x = Tensor(np.zeros((2, 3, 4)))
    assert x.shape == (2, 3, 4) and x.size == 24 and x.ndim == 3


def test_item_rejects_non_scalar():
    with pytest.raises(DimensionError):
        Tensor([1.0, 2.0]).item()


# ---------------------------------------------------------------- matmul

def test_matmul_hand_case():
    # [[1,2],[3,4]] @ [[0,1],[1,0]]: row 1 = (1*0+2*1, 1*1+2*0) = (2,1),
    # row 2 = (3*0+4*1, 3*1+4*0) = (4,3)
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.0, 1.0], [1.0, 0.0]])
    npt.assert_array_equal((a @ b).numpy(), [[2.0, 1.0], [4.0, 3.0]])


def test_matmul_shape_checks():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


def test_matmul_matches_numpy_random():
    rng = np.random.default_rng(0)
    for m, k, n in [(1, 1, 1), (3, 4, 2), (5, 2, 7)]:
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        npt.assert_allclose(T.matmul(t64(a), t64(b)).numpy(), a @ b, rtol=1e-12)


# ------------------------------------------------------------ elementwise

def test_add_sub_mul_scale_values():
    a = Tensor([1.0, -2.0, 3.0])
    b = Tensor([0.5, 0.5, 0.5])
    npt.assert_allclose((a + b).numpy(), [1.5, -1.5, 3.5])
    npt.assert_allclose((a - b).numpy(), [0.5, -2.5, 2.5])
    npt.assert_allclose((a * b).numpy(), [0.5, -1.0, 1.5])
    npt.assert_allclose((2.0 * a).numpy(), [2.0, -4.0, 6.0])
    npt.assert_allclose((a + 1.0).numpy(), [2.0, -1.0, 4.0])


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        T.add(Tensor([1.0]), Tensor([1.0, 2.0]))
    with pytest.raises(DimensionError):
        T.mul(Tensor(np.zeros((2, 2))), Tensor(np.zeros((4,))))


def test_relu_zero_derivative_at_zero():
    x = t64([-1.0, 0.0, 2.0], rg=True)
    y = T.reduce_sum(T.relu(x))
    y.backward()
    npt.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_sqrt_domain_error():
    with pytest.raises(NumericError):
        T.sqrt(Tensor([-1.0]))


def test_sqrt_zero_gradient_convention():
    x = t64([0.0, 4.0], rg=True)
    T.reduce_sum(T.sqrt(x)).backward()
    npt.assert_allclose(x.grad, [0.0, 0.25])


def test_softplus_values_and_stability():
    x = t64([0.0, 100.0, -100.0])
    y = T.softplus(x).numpy()
    npt.assert_allclose(y[0], np.log(2.0), rtol=1e-12)
    npt.assert_allclose(y[1], 100.0, rtol=1e-12)
    assert 0 <= y[2] < 1e-30
    assert np.isfinite(y).all()


def test_reciprocal_zero_input():
    with pytest.raises(NumericError):
        T.reciprocal(Tensor([0.0, 1.0]))


def test_add_rowvec_and_backward():
    x = t64(np.arange(6.0).reshape(2, 3), rg=True)
    r = t64([10.0, 20.0, 30.0], rg=True)
    y = T.add_rowvec(x, r)
    npt.assert_allclose(y.numpy(), [[10, 21, 32], [13, 24, 35]])
    T.reduce_sum(y).backward()
    npt.assert_allclose(x.grad, np.ones((2, 3)))
    npt.assert_allclose(r.grad, [2.0, 2.0, 2.0])


# ---------------------------------------------------------------- softmax

def test_softmax_hand_case():
    # exp(0) : exp(ln 2) = 1 : 2 within any row shift
    for c in (0.0, 5.0, -3.0):
        y = T.softmax_rows(t64([[c, c + np.log(2.0)]])).numpy()
        npt.assert_allclose(y, [[1 / 3, 2 / 3]], rtol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    y = T.softmax_rows(t64(rng.standard_normal((5, 7)))).numpy()
    assert (y >= 0).all()
    npt.assert_allclose(y.sum(axis=1), np.ones(5), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=6),
       st.floats(-50, 50))
def test_softmax_shift_invariance(row, c):
    x = np.asarray([row], dtype=F64)
    a = T.softmax_rows(t64(x)).numpy()
    b = T.softmax_rows(t64(x + c)).numpy()
    npt.assert_allclose(a, b, atol=1e-12)


def test_softmax_nan_rejected():
    with pytest.raises(NumericError):
        T.softmax_rows(Tensor([[np.nan, 0.0]]))


def test_large_magnitude_softmax_finite():
    y = T.softmax_rows(t64([[1e4, -1e4, 0.0]])).numpy()
    assert np.isfinite(y).all()
    npt.assert_allclose(y.sum(), 1.0, rtol=1e-12)


# -------------------------------------------------------------- layernorm

def test_layernorm_rows_zero_mean_unit_var():
    rng = np.random.default_rng(2)
    x = t64(rng.standard_normal((4, 8)))
    g = t64(np.ones(8))
    b = t64(np.zeros(8))
    y = T.layernorm_rows(x, g, b).numpy()
    npt.assert_allclose(y.mean(axis=1), np.zeros(4), atol=1e-12)
    npt.assert_allclose(y.var(axis=1), np.ones(4), rtol=1e-4)


# -------------------------------------------------------------- reductions

def test_reductions_values():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert T.reduce_sum(x).item() == 10.0
    assert T.reduce_mean(x).item() == 2.5
    npt.assert_allclose(T.reduce_sum(x, axes=0).numpy(), [4.0, 6.0])
    npt.assert_allclose(T.reduce_mean(x, axes=1, keepdims=True).numpy(), [[1.5], [3.5]])


def test_reduce_empty_axes_is_identity():
    x = Tensor([[1.0, 2.0]])
    npt.assert_array_equal(T.reduce_sum(x, axes=()).numpy(), x.numpy())
    npt.assert_array_equal(T.reduce_mean(x, axes=()).numpy(), x.numpy())


def test_reduce_bad_axis():
    with pytest.raises(DimensionError):
        T.reduce_sum(Tensor([1.0]), axes=3)


# ------------------------------------------------------------ shape/gather

def test_reshape_transpose_concat_take():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    npt.assert_array_equal(T.reshape(x, (3, 2)).numpy(), np.arange(6.0).reshape(3, 2))
    with pytest.raises(DimensionError):
        T.reshape(x, (4, 2))
    npt.assert_array_equal(T.transpose2d(x).numpy(), x.numpy().T)
    y = T.concat([x, x], axis=0)
    assert y.shape == (4, 3)
    z = T.take_rows(x, [1, 0, 1])
    npt.assert_array_equal(z.numpy(), x.numpy()[[1, 0, 1]])
    with pytest.raises(DimensionError):
        T.take_rows(x, [2])


def test_take_rows_backward_accumulates_repeats():
    x = t64(np.ones((3, 2)), rg=True)
    T.reduce_sum(T.take_rows(x, [0, 0, 2])).backward()
    npt.assert_array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


# ------------------------------------------------------------------- conv

def test_conv2d_identity_kernel():
    x = t64(np.arange(16.0).reshape(1, 4, 4))
    w = t64(np.ones((1, 1, 1, 1)))
    y = T.conv2d(x, w)
    npt.assert_array_equal(y.numpy(), x.numpy())


def test_conv2d_hand_case():
    # 3x3 box filter, no padding: top-left output = sum of the top-left 3x3
    x = t64(np.arange(16.0).reshape(1, 4, 4))
    w = t64(np.ones((1, 1, 3, 3)))
    y = T.conv2d(x, w).numpy()
    assert y.shape == (1, 2, 2)
    npt.assert_allclose(y[0, 0, 0], sum([0, 1, 2, 4, 5, 6, 8, 9, 10]))
    npt.assert_allclose(y[0, 1, 1], sum([5, 6, 7, 9, 10, 11, 13, 14, 15]))


def test_conv2d_stride_padding_shape():
    x = t64(np.zeros((3, 8, 8)))
    w = t64(np.zeros((5, 3, 3, 3)))
    b = t64(np.zeros(5))
    assert T.conv2d(x, w, b, stride=2, padding=1).shape == (5, 4, 4)
    with pytest.raises(DimensionError):
        T.conv2d(x, t64(np.zeros((5, 2, 3, 3))))


def test_conv2d_scalar_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    stride, pad = 2, 1
    y = T.conv2d(t64(x), t64(w), t64(b), stride=stride, padding=pad).numpy()
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = (5 + 2 * pad - 3) // stride + 1
    w_out = (6 + 2 * pad - 3) // stride + 1
    ref = np.zeros((3, h_out, w_out))
    for o in range(3):
        for i in range(h_out):
            for j in range(w_out):
                acc = b[o]
                for c in range(2):
                    for ki in range(3):
                        for kj in range(3):
                            acc += w[o, c, ki, kj] * xp[c, i * stride + ki, j * stride + kj]
                ref[o, i, j] = acc
    npt.assert_allclose(y, ref, rtol=1e-10, atol=1e-12)


# --------------------------------------------------------- tape / backward

def test_backward_requires_scalar():
    x = t64([1.0, 2.0], rg=True)
    with pytest.raises(ContractError):
        T.relu(x).backward()


def test_square_norm_gradient_hand_case():
    # f = sum(x^2) at x=(3,4): grad = 2x = (6, 8)
    x = t64([3.0, 4.0], rg=True)
    T.reduce_sum(T.square(x)).backward()
    npt.assert_allclose(x.grad, [6.0, 8.0])


def test_fanout_accumulation():
    # loss = sum(x) + sum(x) -> grad = 2 * ones
    x = t64(np.ones(4), rg=True)
    (T.reduce_sum(x) + T.reduce_sum(x)).backward()
    npt.assert_array_equal(x.grad, 2 * np.ones(4))


def test_grad_accumulates_across_passes():
    x = t64([1.0], rg=True)
    T.reduce_sum(T.square(x)).backward()
    T.reduce_sum(T.square(x)).backward()
    npt.assert_allclose(x.grad, [4.0])


def test_tape_topological_order():
    x = t64(np.ones((2, 2)), rg=True)
    y = T.relu(x @ x) + T.square(x)
    loss = T.reduce_sum(y * y)
    tape = ComputationTape.from_output(loss)
    pos = {id(op): i for i, op in enumerate(tape.ops)}
    for op in tape.ops:
        for inp in op.inputs:
            if inp.op is not None:
                assert pos[id(inp.op)] < pos[id(op)]


def test_no_grad_suppresses_recording():
    x = t64([1.0], rg=True)
    with no_grad():
        y = T.square(x)
    assert y.op is None and not y.requires_grad


def test_constant_branch_gets_no_grad():
    x = t64([2.0], rg=True)
    c = t64([5.0])
    loss = T.reduce_sum(T.mul(x, c))
    loss.backward()
    npt.assert_allclose(x.grad, [5.0])
    assert c.grad is None


def test_backward_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        x = t64(rng.standard_normal((4, 4)), rg=True)
        w = t64(rng.standard_normal((4, 4)), rg=True)
        y = T.softmax_rows(x @ w)
        loss = T.reduce_mean(T.square(y))
        loss.backward()
        return loss.numpy().tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


# ------------------------------------------------------ finite differences

def test_fd_grad_hand_case():
    # f = sum(x^2) at (3,4) -> (6, 8)
    g = fd_grad(lambda t: T.reduce_sum(T.square(t)), t64([3.0, 4.0]))
    npt.assert_allclose(g.numpy(), [6.0, 8.0], rtol=1e-8)


@pytest.mark.parametrize("name,build", [
    ("matmul", lambda x: T.reduce_sum(T.square(x @ x))),
    ("softmax", lambda x: T.reduce_sum(T.square(T.softmax_rows(x)))),
    ("relu_chain", lambda x: T.reduce_mean(T.relu(x @ x) * T.relu(x @ x))),
    ("sqrt", lambda x: T.reduce_sum(T.sqrt(T.square(x) + 1.0))),
    ("softplus", lambda x: T.reduce_sum(T.square(T.softplus(x)))),
    ("reciprocal", lambda x: T.reduce_sum(T.reciprocal(T.square(x) + 2.0))),
    ("mean_axis", lambda x: T.reduce_sum(T.square(T.reduce_mean(x, axes=1)))),
    ("transpose", lambda x: T.reduce_sum(T.square(T.transpose2d(x) @ x))),
])
def test_gradcheck_primitives(name, build):
    rng = np.random.default_rng(11)
    x = t64(rng.standard_normal((4, 4)) + 0.1, rg=True)
    report = gradcheck(lambda: build(x), {"x": x})
    assert report["x"] < 1e-4, f"{name}: {report}"


def test_gradcheck_layernorm():
    rng = np.random.default_rng(12)
    x = t64(rng.standard_normal((3, 6)), rg=True)
    g = t64(rng.standard_normal(6), rg=True)
    b = t64(rng.standard_normal(6), rg=True)
    rep = gradcheck(lambda: T.reduce_sum(T.square(T.layernorm_rows(x, g, b))),
                    {"x": x, "gain": g, "bias": b})
    assert max(rep.values()) < 1e-4, rep


def test_gradcheck_conv2d():
    rng = np.random.default_rng(13)
    x = t64(rng.standard_normal((2, 6, 6)), rg=True)
    w = t64(rng.standard_normal((3, 2, 3, 3)) * 0.5, rg=True)
    b = t64(rng.standard_normal(3), rg=True)

    def build():
        y = T.conv2d(x, w, b, stride=2, padding=1)
        return T.reduce_sum(T.square(y))

    rep = gradcheck(build, {"x": x, "w": w, "b": b})
    assert max(rep.values()) < 1e-4, rep


def test_gradcheck_concat_take_rows():
    rng = np.random.default_rng(14)
    a = t64(rng.standard_normal((2, 3)), rg=True)
    b = t64(rng.standard_normal((2, 3)), rg=True)

    def build():
        y = T.concat([a, b], axis=0)
        z = T.take_rows(y, [0, 3, 3])
        return T.reduce_sum(T.square(z))

    rep = gradcheck(build, {"a": a, "b": b})
    assert max(rep.values()) < 1e-4, rep


def test_injected_backward_fault_detected():
    rng = np.random.default_rng(15)
    x = t64(rng.standard_normal((3, 3)), rg=True)

    def build():
        return T.reduce_sum(T.square(T.relu(x @ x + 1.0)))

    clean = gradcheck(build, {"x": x})["x"]
    assert clean < 1e-4
    T._backward_faults.add("relu")
    try:
        bad = gradcheck(build, {"x": x})["x"]
    finally:
        T._backward_faults.clear()
    assert bad > 1e-2


def test_max_rel_error_small_magnitudes_compare_absolutely():
    assert max_rel_error(np.array([1e-9]), np.array([0.0])) < 1e-4
    assert max_rel_error(np.array([1.0]), np.array([1.0 + 2e-4])) > 1e-4
