import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from vidground.diffcore import Adam, NonFiniteError, Tape, Tensor, backward, gradcheck, no_grad, ops
from vidground.diffcore.check import directional_check, relative_error

from _gradcases import PRIMITIVES

finite = st.floats(-5, 5, allow_nan=False, width=64)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    for seed in range(3):
        fn, inputs = PRIMITIVES[name](np.random.default_rng(seed))
        assert gradcheck(fn, inputs) < 1e-6, name


def test_tensor_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError):
        backward(y, tape)


def test_leaf_gradients_accumulate_until_cleared():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            y = (x * x).sum()
        backward(y, tape)
    np.testing.assert_allclose(x.grad, 2 * 2 * x.data)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = (x * 3.0).sum()
    assert len(tape) == 0
    assert not y.requires_grad


def test_shared_subexpression_gradient():
    x = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    with Tape() as tape:
        y = x * x
        z = (y + y * x).sum()
    backward(z, tape)
    np.testing.assert_allclose(x.grad, 2 * x.data + 3 * x.data**2)


def test_masked_softmax_exact_zeros():
    logits = Tensor(np.random.default_rng(0).standard_normal((2, 5)) * 50)
    mask = np.array([[1, 0, 1, 0, 1], [0, 0, 0, 1, 0]], dtype=bool)
    y = ops.masked_softmax(logits, mask).data
    assert np.all(y[~mask] == 0.0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0)
    assert y[1, 3] == 1.0


def test_masked_softmax_degenerate_row_raises():
    with pytest.raises(ValueError, match="degenerate"):
        ops.masked_softmax(Tensor(np.zeros((2, 3))), np.array([[1, 0, 0], [0, 0, 0]]))


def test_masked_softmax_rejects_non_binary_mask():
    with pytest.raises(ValueError):
        ops.masked_softmax(Tensor(np.zeros(3)), np.array([1, 0.5, 0]))


@given(arrays(np.float64, (3, 6), elements=finite))
def test_softmax_rows_are_distributions(x):
    y = ops.softmax(Tensor(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


@given(arrays(np.float64, (2, 8), elements=finite), st.floats(-3, 3))
def test_softmax_shift_invariant(x, c):
    np.testing.assert_allclose(ops.softmax(Tensor(x)).data, ops.softmax(Tensor(x + c)).data, atol=1e-12)


def test_conv1d_rejects_even_width():
    with pytest.raises(ValueError):
        ops.conv1d(Tensor(np.zeros((4, 2))), Tensor(np.zeros((2, 2, 1))))


def test_conv1d_matches_direct_sum(rng):
    x = rng.standard_normal((7, 3))
    k = rng.standard_normal((3, 3, 2))
    y = ops.conv1d(Tensor(x), Tensor(k)).data
    pad = np.vstack([np.zeros((1, 3)), x, np.zeros((1, 3))])
    ref = np.stack([sum(pad[j + o] @ k[o] for o in range(3)) for j in range(7)])
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_bce_sums_over_frames():
    p = Tensor(np.array([[0.9, 0.2]]))
    y = np.array([[1.0, 0.0]])
    val = ops.binary_cross_entropy(p, y).data
    np.testing.assert_allclose(val, [-np.log(0.9) - np.log(0.8)])


def test_bce_rejects_soft_labels():
    with pytest.raises(ValueError):
        ops.binary_cross_entropy(Tensor(np.array([0.5])), np.array([0.3]))


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        ops.cross_entropy(Tensor(np.array([[0.5, 0.5]])), np.array([2]))


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        ops.mse(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_embedding_bounds():
    with pytest.raises(IndexError):
        ops.embedding(Tensor(np.zeros((3, 2))), np.array([3]))


def test_layer_norm_standardises(rng):
    x = Tensor(rng.standard_normal((4, 16)) * 5 + 3)
    y = ops.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=-1), 1, atol=1e-3)


def test_relative_error_is_normwise():
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 1e-9])) < 1e-8
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_directional_check_flags_wrong_gradient(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    bad = lambda: ops.sum(x * x)  # noqa: E731
    assert directional_check(bad, [x], rng) < 1e-6

    def wrong():
        y = x * x
        from vidground.diffcore.tensor import make_result
        return make_result(np.array(y.data.sum()), (x,), lambda g: (g * np.ones_like(x.data),), "wrong")
    assert directional_check(wrong, [x], rng) > 1e-2


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)


def test_adam_clip_norm_scales_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1, clip_norm=1.0)
    p.grad = np.array([30.0, 40.0])
    assert opt.grad_norm() == pytest.approx(50.0)
    opt.step()
    np.testing.assert_allclose(opt.m["p"], 0.1 * np.array([0.6, 0.8]))


def test_adam_state_round_trip():
    p = Tensor(np.ones(3), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    p.grad = np.arange(3.0)
    opt.step()
    q = Tensor(np.ones(3), requires_grad=True)
    opt2 = Adam({"p": q}, lr=0.01)
    opt2.load_state_dict(opt.state_dict())
    assert opt2.t == 1
    np.testing.assert_array_equal(opt2.v["p"], opt.v["p"])
