import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gncformer.exceptions import GradientError, NumericalError, ShapeError
from gncformer.gradcheck import check_gradients
from gncformer.tensor import (
    GradTape,
    Tensor,
    add,
    backward,
    compute_gradients,
    concat_lastdim,
    cross_entropy,
    depthwise_conv1d,
    elementwise_mul,
    layer_norm,
    linear,
    matmul,
    mul,
    parameter,
    softmax_lastdim,
    split_lastdim,
    tsum,
    zero_grad,
)
from oracles import naive_depthwise_conv

small_shapes = st.tuples(st.integers(1, 4), st.integers(1, 6))


def arrays(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


# matmul ---------------------------------------------------------------------
def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_broadcasts_batch():
    a = Tensor(np.ones((2, 3, 4)))
    b = Tensor(np.ones((4, 5)))
    assert matmul(a, b).shape == (2, 3, 5)


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(4, 2)))
    assert check_gradients(lambda: tsum(matmul(a, b)), [a, b]) < 1e-4


# softmax --------------------------------------------------------------------
def test_softmax_uniform():
    assert_allclose(softmax_lastdim(Tensor([0.0, 0.0, 0.0, 0.0])).data, [0.25] * 4)


def test_softmax_large_values_do_not_overflow():
    assert_allclose(softmax_lastdim(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericalError):
        softmax_lastdim(Tensor([0.0, np.inf]))
    with pytest.raises(NumericalError):
        softmax_lastdim(Tensor([np.nan, 1.0]))


@given(shape=small_shapes, seed=st.integers(0, 10_000), shift=st.floats(-50, 50))
def test_softmax_rows_normalised_and_shift_invariant(shape, seed, shift):
    x = arrays(shape, seed) * 5
    y = softmax_lastdim(Tensor(x)).data
    assert np.all(y >= 0)
    assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
    assert_allclose(softmax_lastdim(Tensor(x + shift)).data, y, atol=1e-9)


def test_softmax_gradient(rng):
    x = parameter(rng.normal(size=(3, 5)))
    w = rng.normal(size=(3, 5))
    assert check_gradients(lambda: tsum(mul(softmax_lastdim(x), w)), [x]) < 1e-4


# elementwise ----------------------------------------------------------------
def test_elementwise_mul_examples(rng):
    a = rng.normal(size=(2, 3))
    assert_array_equal(elementwise_mul(Tensor(a), Tensor(np.ones((2, 3)))).data, a)
    assert_array_equal(elementwise_mul(Tensor([1.0, 2.0, 3.0]), Tensor([4.0, 5.0, 6.0])).data, [4, 10, 18])


def test_elementwise_mul_gradient_is_other_operand(rng):
    a, b = parameter(rng.normal(size=(4,))), parameter(rng.normal(size=(4,)))
    backward(tsum(elementwise_mul(a, b)))
    assert_array_equal(a.grad, b.data)
    assert_array_equal(b.grad, a.data)


def test_elementwise_mul_rejects_broadcasting():
    with pytest.raises(ShapeError):
        elementwise_mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3,))))


# linear ---------------------------------------------------------------------
def test_linear_identity(rng):
    x = rng.normal(size=(5, 3))
    assert_array_equal(linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)


def test_linear_hand_example():
    out = linear(Tensor([1.0, 1.0]), Tensor(np.ones((2, 3))), Tensor(np.zeros(3)))
    assert_array_equal(out.data, [2.0, 2.0, 2.0])


def test_linear_dimension_mismatch():
    with pytest.raises(ShapeError):
        linear(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 2))))


def test_linear_weight_gradient(rng):
    x = Tensor(rng.normal(size=(2, 4, 3)))
    w, b = parameter(rng.normal(size=(3, 2))), parameter(rng.normal(size=(2,)))
    weights = rng.normal(size=(2, 4, 2))
    assert check_gradients(lambda: tsum(mul(linear(x, w, b), weights)), [w, b]) < 1e-4


# depthwise convolution ------------------------------------------------------
def test_conv_unit_kernel_is_identity(rng):
    x = rng.normal(size=(6, 3))
    out = depthwise_conv1d(Tensor(x), Tensor(np.ones((3, 1))), Tensor(np.zeros(3)))
    assert_array_equal(out.data, x)


def test_conv_hand_example():
    out = depthwise_conv1d(Tensor([[1.0], [2.0], [3.0]]), Tensor([[1.0, 1.0, 1.0]]), Tensor([0.0]))
    assert_array_equal(out.data[:, 0], [3.0, 6.0, 5.0])


@pytest.mark.parametrize("K", [1, 2, 3, 4, 7])
def test_conv_impulse_response_is_reversed_kernel(K):
    T, hot = 7, 3
    kernel = np.arange(1.0, K + 1)
    x = np.zeros((T, 1))
    x[hot] = 1.0
    out = depthwise_conv1d(Tensor(x), Tensor(kernel[None]))
    left = (K - 1) // 2
    expected = [kernel[hot - t + left] if 0 <= hot - t + left < K else 0.0 for t in range(T)]
    assert_array_equal(out.data[:, 0], expected)


@given(T=st.integers(1, 6), C=st.integers(1, 3), data=st.data(), causal=st.booleans(),
       seed=st.integers(0, 10_000))
def test_conv_matches_triple_loop(T, C, data, causal, seed):
    K = data.draw(st.integers(1, 2 * T + 1))
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(T, C)), rng.normal(size=(C, K)), rng.normal(size=(C,))
    out = depthwise_conv1d(Tensor(x), Tensor(k), Tensor(b), causal=causal)
    assert_allclose(out.data, naive_depthwise_conv(x, k, b, causal), rtol=0, atol=1e-12)


def test_conv_batched_matches_per_sequence(rng):
    x, k = rng.normal(size=(3, 5, 2)), rng.normal(size=(2, 4))
    out = depthwise_conv1d(Tensor(x), Tensor(k)).data
    for i in range(3):
        assert_allclose(out[i], naive_depthwise_conv(x[i], k), atol=1e-12)


@pytest.mark.parametrize("causal", [False, True])
def test_conv_gradient_with_batch_axis(rng, causal):
    x = parameter(rng.normal(size=(2, 4, 3)))
    k = parameter(rng.normal(size=(3, 3)))
    b = parameter(rng.normal(size=3))
    w = rng.normal(size=(2, 4, 3))
    assert check_gradients(lambda: tsum(mul(depthwise_conv1d(x, k, b, causal=causal), w)), [x, k, b]) < 1e-4


def test_conv_batched_kernel_gradient_sums_over_sequences(rng):
    x = rng.normal(size=(2, 4, 3))
    k = parameter(np.ones((3, 3)))
    whole = compute_gradients(tsum(depthwise_conv1d(Tensor(x), k)), [k])[0]
    parts = sum(compute_gradients(tsum(depthwise_conv1d(Tensor(x[i]), k)), [k])[0] for i in range(2))
    assert_allclose(whole, parts, atol=1e-12)


def test_conv_rejects_wide_kernel():
    with pytest.raises(ShapeError, match="2T\\+1"):
        depthwise_conv1d(Tensor(np.ones((2, 1))), Tensor(np.ones((1, 6))))


def test_causal_conv_accepts_any_width_and_looks_back_only(rng):
    x = rng.normal(size=(2, 1))
    out = depthwise_conv1d(Tensor(x), Tensor(np.ones((1, 6))), causal=True)
    assert_allclose(out.data[:, 0], [x[0, 0], x[0, 0] + x[1, 0]])


# layer norm -----------------------------------------------------------------
def test_layer_norm_constant_slice_is_zero():
    out = layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert_array_equal(out.data, 0.0)


def test_layer_norm_hand_example():
    out = layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert_allclose(out.data, [-1.0, 1.0], atol=1e-6)


@given(seed=st.integers(0, 10_000), D=st.integers(2, 8))
def test_layer_norm_slice_mean_equals_shift_mean_with_unit_gain(seed, D):
    rng = np.random.default_rng(seed)
    shift = rng.normal(size=D)
    out = layer_norm(Tensor(rng.normal(size=(3, D)) * 4 + 1), Tensor(np.ones(D)), Tensor(shift))
    assert_allclose(out.data.mean(axis=-1), shift.mean(), atol=1e-9)


# split / concat -------------------------------------------------------------
def test_split_example():
    a, b = split_lastdim(Tensor([1.0, 2.0, 3.0, 4.0]), [2, 2])
    assert_array_equal(a.data, [1.0, 2.0])
    assert_array_equal(b.data, [3.0, 4.0])


@given(widths=st.lists(st.integers(1, 4), min_size=1, max_size=5), rows=st.integers(1, 3),
       seed=st.integers(0, 10_000))
def test_concat_of_split_is_bit_exact(widths, rows, seed):
    x = arrays((rows, sum(widths)), seed)
    parts = split_lastdim(Tensor(x), widths)
    assert [p.shape[-1] for p in parts] == widths
    assert_array_equal(concat_lastdim(parts).data, x)


def test_split_width_mismatch():
    with pytest.raises(ShapeError):
        split_lastdim(Tensor(np.ones((2, 5))), [2, 2])


def test_split_gradient_routes_to_slice(rng):
    x = parameter(rng.normal(size=(3, 6)))
    _, middle, _ = split_lastdim(x, [1, 3, 2])
    backward(tsum(middle))
    expected = np.zeros((3, 6))
    expected[:, 1:4] = 1.0
    assert_array_equal(x.grad, expected)


# cross entropy --------------------------------------------------------------
def test_cross_entropy_uniform_is_log_vocab():
    V = 7
    loss = cross_entropy(Tensor(np.zeros((4, V))), [0, 3, 6, 2])
    assert_allclose(loss.item(), np.log(V))


def test_cross_entropy_label_smoothing_keeps_uniform_loss():
    loss = cross_entropy(Tensor(np.zeros((3, 5))), [1, 2, 3], label_smoothing=0.1)
    assert_allclose(loss.item(), np.log(5))


def test_cross_entropy_saturated_target():
    logits = np.zeros((1, 4))
    logits[0, 2] = 1e4
    assert cross_entropy(Tensor(logits), [2]).item() < 1e-9


def test_cross_entropy_out_of_range_target():
    with pytest.raises(ValueError, match="out of range"):
        cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_cross_entropy_ignore_index(rng):
    logits = rng.normal(size=(3, 4))
    full = cross_entropy(Tensor(logits[:2]), [1, 2]).item()
    masked = cross_entropy(Tensor(logits), [1, 2, 0], ignore_index=0).item()
    assert_allclose(masked, full)
    with pytest.raises(ValueError):
        cross_entropy(Tensor(logits), [0, 0, 0], ignore_index=0)


def test_cross_entropy_sum_reduction(rng):
    logits = Tensor(rng.normal(size=(4, 3)))
    targets = [0, 1, 2, 1]
    assert_allclose(cross_entropy(logits, targets, reduction="sum").item(),
                    4 * cross_entropy(logits, targets).item())


def test_cross_entropy_gradient(rng):
    z = parameter(rng.normal(size=(2, 3, 5)))
    targets = np.array([[1, 2, 0], [4, 4, 3]])
    loss = lambda: cross_entropy(z, targets, ignore_index=0, label_smoothing=0.1)  # noqa: E731
    assert check_gradients(loss, [z]) < 1e-4


# backward -------------------------------------------------------------------
def test_backward_of_sum_is_ones(rng):
    x = parameter(rng.normal(size=(2, 3)))
    backward(tsum(x))
    assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_of_square(rng):
    x = parameter(rng.normal(size=(5,)))
    backward(tsum(elementwise_mul(x, x)))
    assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates_until_zero_grad(rng):
    x = parameter(rng.normal(size=(3,)))
    loss = tsum(elementwise_mul(x, x))
    backward(loss)
    backward(loss)
    assert_allclose(x.grad, 4 * x.data)
    zero_grad([x])
    assert x.grad is None


def test_reused_tensor_gets_one_contribution_per_use(rng):
    x = parameter(rng.normal(size=(4,)))
    y = elementwise_mul(x, x)
    backward(tsum(add(y, y)))
    assert_allclose(x.grad, 4 * x.data)


def test_backward_populates_every_ancestor(rng):
    a, b = parameter(rng.normal(size=(2, 2))), parameter(rng.normal(size=(2, 2)))
    unused_branch = elementwise_mul(a, Tensor(np.zeros((2, 2))))
    backward(tsum(add(matmul(a, b), unused_branch)))
    assert a.grad is not None and a.grad.shape == a.shape
    assert b.grad is not None and b.grad.shape == b.shape


def test_backward_rejects_non_scalar(rng):
    with pytest.raises(ShapeError):
        backward(parameter(rng.normal(size=(2,))))


def test_backward_needs_tape():
    with pytest.raises(GradientError):
        backward(tsum(Tensor(np.ones(3))))


def test_compute_gradients_leaves_grad_untouched(rng):
    x = parameter(rng.normal(size=(3,)))
    (g,) = compute_gradients(tsum(elementwise_mul(x, x)), [x])
    assert_allclose(g, 2 * x.data)
    assert x.grad is None


def test_tape_orders_inputs_before_outputs(rng):
    x = parameter(rng.normal(size=(2,)))
    y = elementwise_mul(x, x)
    z = tsum(add(y, x))
    nodes = GradTape(z).nodes
    position = {id(n): i for i, n in enumerate(nodes)}
    assert position[id(x)] < position[id(y)] < position[id(z)]
