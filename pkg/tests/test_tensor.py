import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nial import tensor as T
from nial.errors import ContractError, DimensionError, LabelError
from nial.tensor import Tensor, backward, grad_check


def rand(rng, *shape, grad=True):
    return Tensor(rng.normal(size=shape), requires_grad=grad)


# --------------------------------------------------------------------------
# matmul
# --------------------------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    npt.assert_array_equal(T.matmul(a, Tensor(np.eye(2))).data, a.data)


def test_matmul_hand_dot_product():
    npt.assert_array_equal(T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_backward_formula():
    rng = np.random.default_rng(0)
    a, b = rand(rng, 3, 4), rand(rng, 4, 2)
    backward(T.matmul(a, b).sum())
    ones = np.ones((3, 2))
    npt.assert_allclose(a.grad, ones @ b.data.T)
    npt.assert_allclose(b.grad, a.data.T @ ones)


def test_batched_matmul_broadcasts_weight():
    rng = np.random.default_rng(1)
    x, w = rand(rng, 2, 5, 3), rand(rng, 3, 4)
    assert grad_check(lambda _: (T.matmul(x, w) * T.matmul(x, w)).sum(), [x, w]) < 1e-6


# --------------------------------------------------------------------------
# conv1d / maxpool1d
# --------------------------------------------------------------------------


def test_conv1d_hand_window():
    x = Tensor([[[1.0, 2.0, 3.0, 4.0]]])
    w = Tensor([[[1.0, 0.0, -1.0]]])
    out = T.conv1d(x, w, Tensor([0.0]), stride=1, padding=0)
    npt.assert_array_equal(out.data, [[[-2.0, -2.0]]])


def test_conv1d_identity_kernel():
    x = Tensor(np.random.default_rng(2).normal(size=(2, 1, 9)))
    out = T.conv1d(x, Tensor([[[1.0]]]), Tensor([0.0]))
    npt.assert_array_equal(out.data, x.data)


def conv_oracle(x, w, b, stride, padding):
    # direct loops, independent of the im2col path
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    lout = (length + 2 * padding - k) // stride + 1
    out = np.zeros((bsz, cout, lout))
    for n in range(bsz):
        for o in range(cout):
            for i in range(lout):
                out[n, o, i] = np.sum(xp[n, :, i * stride : i * stride + k] * w[o]) + b[o]
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 2)])
def test_conv1d_matches_loop_oracle(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x, w, b = rng.normal(size=(2, 3, 11)), rng.normal(size=(4, 3, 5)), rng.normal(size=4)
    out = T.conv1d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
    npt.assert_allclose(out.data, conv_oracle(x, w, b, stride, padding), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 2), (3, 1)])
def test_conv1d_gradcheck(stride, padding):
    rng = np.random.default_rng(5)
    x, w, b = rand(rng, 2, 2, 11), rand(rng, 3, 2, 5), rand(rng, 3)
    probe = rng.normal(size=(2, 3, T.conv1d_out_len(11, 5, stride, padding)))
    err = grad_check(lambda _: (T.conv1d(x, w, b, stride, padding) * probe).sum(), [x, w, b])
    assert err < 1e-6


def test_conv1d_kernel_too_large():
    with pytest.raises(DimensionError):
        T.conv1d(Tensor(np.ones((1, 1, 3))), Tensor(np.ones((1, 1, 6))), padding=1)


def test_maxpool_forward():
    out = T.maxpool1d(Tensor([[[1.0, 3.0, 2.0, 5.0]]]), 2, 2)
    npt.assert_array_equal(out.data, [[[3.0, 5.0]]])


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.full((1, 1, 6), 7.0), requires_grad=True)
    out = T.maxpool1d(x, 3, 3)
    npt.assert_array_equal(out.data, [[[7.0, 7.0]]])
    backward(out.sum())
    npt.assert_array_equal(x.grad, [[[1, 0, 0, 1, 0, 0]]])


def test_maxpool_overlapping_windows_gradcheck():
    rng = np.random.default_rng(8)
    x = rand(rng, 2, 3, 10)
    probe = rng.normal(size=(2, 3, T.pool1d_out_len(10, 3, 1)))
    assert grad_check(lambda _: (T.maxpool1d(x, 3, 1) * probe).sum(), x) < 1e-6


def test_maxpool_window_too_large():
    with pytest.raises(DimensionError):
        T.maxpool1d(Tensor(np.ones((1, 1, 3))), 4, 1)


@pytest.mark.parametrize("length", [1, 2, 5, 11, 32])
@pytest.mark.parametrize("kernel", [1, 2, 3, 5])
@pytest.mark.parametrize("stride", [1, 2, 3])
@pytest.mark.parametrize("padding", [0, 1, 2])
def test_output_length_formulas(length, kernel, stride, padding):
    x = Tensor(np.zeros((1, 1, length)))
    if kernel > length + 2 * padding:
        with pytest.raises(DimensionError):
            T.conv1d(x, Tensor(np.zeros((1, 1, kernel))), stride=stride, padding=padding)
    else:
        out = T.conv1d(x, Tensor(np.zeros((1, 1, kernel))), stride=stride, padding=padding)
        assert out.shape[2] == (length + 2 * padding - kernel) // stride + 1
    if kernel <= length:
        assert T.maxpool1d(x, kernel, stride).shape[2] == (length - kernel) // stride + 1


# --------------------------------------------------------------------------
# activations and layernorm
# --------------------------------------------------------------------------


def test_softmax_uniform():
    npt.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0]), 0).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_no_overflow():
    y = T.softmax(Tensor([1000.0, 0.0]), 0).data
    assert np.all(np.isfinite(y))
    npt.assert_allclose(y, [1.0, math.exp(-1000.0)], atol=1e-300)


def test_softmax_bad_axis():
    with pytest.raises(DimensionError):
        T.softmax(Tensor(np.ones((2, 3))), axis=2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 50.0))
def test_softmax_rows_are_distributions(seed, scale):
    z = np.random.default_rng(seed).normal(scale=scale, size=(6, 9))
    y = T.softmax(Tensor(z), axis=-1).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) <= 1e-12)
    assert np.all((y > 0) & (y <= 1))


def test_sigmoid_and_relu_values():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    npt.assert_array_equal(T.relu(Tensor([-2.0, 0.0, 3.0])).data, [0.0, 0.0, 3.0])


def test_layernorm_hand_zscore():
    out = T.layernorm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    npt.assert_allclose(out.data, [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_layernorm_constant_slice_gives_beta():
    beta = Tensor([0.5, -1.0, 2.0])
    out = T.layernorm(Tensor([4.0, 4.0, 4.0]), Tensor([3.0, 3.0, 3.0]), beta)
    npt.assert_array_equal(out.data, beta.data)


def test_layernorm_shape_error():
    with pytest.raises(DimensionError):
        T.layernorm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def test_cross_entropy_ln2():
    assert T.categorical_cross_entropy(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2), abs=1e-15)


def test_cross_entropy_confident_limit():
    assert T.categorical_cross_entropy(Tensor([[1e4, 0.0, -5.0]]), [0]).item() == 0.0


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(3)
    z = rand(rng, 4, 3)
    labels = np.array([0, 2, 1, 2])
    backward(T.categorical_cross_entropy(z, labels))
    expected = T._softmax(z.data, 1)
    expected[np.arange(4), labels] -= 1
    npt.assert_allclose(z.grad, expected / 4, rtol=1e-12)


def test_cross_entropy_label_error_names_row():
    with pytest.raises(LabelError, match="row 1"):
        T.categorical_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_bce_ln2_both_labels():
    assert T.binary_cross_entropy(Tensor([[0.0]]), [1]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert T.binary_cross_entropy(Tensor([[0.0]]), [0]).item() == pytest.approx(math.log(2), abs=1e-15)


def test_bce_stable_at_extreme_logits():
    loss = T.binary_cross_entropy(Tensor([[800.0], [-800.0]]), [0, 1]).item()
    assert loss == pytest.approx(800.0)


def test_bce_rejects_non_binary():
    with pytest.raises(LabelError):
        T.binary_cross_entropy(Tensor([[0.0], [1.0]]), [0, 2])


# --------------------------------------------------------------------------
# backward semantics
# --------------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(x.sum())
    npt.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward((x * x).sum())
    npt.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates_exactly():
    rng = np.random.default_rng(4)
    x, w = rand(rng, 3, 4), rand(rng, 4, 2)

    def loss():
        return T.categorical_cross_entropy(T.relu(x @ w), [0, 1, 1])

    backward(loss())
    once = w.grad.copy()
    backward(loss())
    npt.assert_array_equal(w.grad, 2 * once)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_populates_intermediates_and_reused_nodes():
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    z = (y + y * x).sum()  # x^2 + x^3
    backward(z)
    npt.assert_allclose(x.grad, [2 * 3 + 3 * 9])
    npt.assert_allclose(y.grad, [1 + 3])


def test_tape_visits_each_op_once():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * x
    out = (y + y).sum()
    tape = T.GradTape(out)
    assert len({id(n) for n in tape}) == len(tape) == 4
    pos = {id(n): i for i, n in enumerate(tape)}
    for node in tape:
        for parent in node._parents:
            assert pos[id(parent)] < pos[id(node)]


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_ops_are_deterministic():
    rng = np.random.default_rng(6)
    x, w, b = rng.normal(size=(3, 2, 20)), rng.normal(size=(4, 2, 5)), rng.normal(size=4)
    a = T.conv1d(Tensor(x), Tensor(w), Tensor(b), 2, 2).data
    c = T.conv1d(Tensor(x), Tensor(w), Tensor(b), 2, 2).data
    assert a.tobytes() == c.tobytes()


# --------------------------------------------------------------------------
# grad_check itself
# --------------------------------------------------------------------------


def test_grad_check_linear_is_exact():
    x = Tensor(np.random.default_rng(7).normal(size=(3, 4)), requires_grad=True)
    assert grad_check(lambda t: t.sum(), x) < 1e-10


def test_grad_check_relu_away_from_kink():
    rng = np.random.default_rng(9)
    data = rng.normal(size=20)
    data[np.abs(data) < 0.1] += 0.5
    x = Tensor(data, requires_grad=True)
    assert grad_check(lambda t: T.relu(t).sum(), x) < 1e-6


def test_grad_check_detects_wrong_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)

    def bad(t):
        return T._make(np.asarray((t.data**2).sum()), (t,), lambda g: (g * t.data,), "bad")

    assert grad_check(bad, x) > 0.1
