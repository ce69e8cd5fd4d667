"""Gradient-graph unit tests: spec'd examples plus the finite-difference
oracle over every differentiable kernel at three or more shapes each."""

import numpy as np
import pytest

from dualspeech import autodiff as ad
from dualspeech.autodiff import ContractViolation, Tensor

from conftest import finite_diff_check


def test_square_sum_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_identity_matmul_gradient():
    a = Tensor(np.eye(2))
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    ad.backward(ad.sum_all(ad.matmul(a, b)))
    # dL/dB = A^T @ ones = all ones for identity A
    np.testing.assert_array_equal(b.grad, np.ones((2, 2)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractViolation):
        ad.backward(ad.mul(x, x))


def test_unused_parameter_gets_no_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    ad.backward(ad.sum_all(ad.mul(x, x)))
    assert unused.grad is None  # treated as zero by the optimizer


def test_backward_deterministic_bitwise(rng):
    def run():
        x = Tensor(rng_fixed.copy(), requires_grad=True)
        w = Tensor(w_fixed.copy(), requires_grad=True)
        h = ad.relu(ad.matmul(x, w))
        p = ad.masked_softmax(h)
        ad.backward(ad.sum_all(ad.mul(p, p)))
        return x.grad.copy(), w.grad.copy()

    rng_fixed = rng.normal(size=(4, 5))
    w_fixed = rng.normal(size=(5, 5))
    gx1, gw1 = run()
    gx2, gw2 = run()
    assert (gx1 == gx2).all() and (gw1 == gw2).all()


def test_no_grad_skips_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad and y._backward is None


def test_forward_ops_stay_finite(rng):
    # softmax max-subtraction and stable sigmoid/BCE on huge inputs
    big = Tensor(rng.normal(size=(3, 4)) * 500.0)
    assert np.isfinite(ad.masked_softmax(big).data).all()
    assert np.isfinite(ad.sigmoid(big).data).all()
    logits = Tensor(np.array([[800.0, -800.0]]))
    loss = ad.masked_bce_logits(logits, np.array([[1.0, 0.0]]),
                                np.ones((1, 2), dtype=bool))
    assert np.isfinite(loss.item())


# ---------------------------------------------------------------------------
# finite-difference oracle per kernel, >= 3 shapes each


MATMUL_SHAPES = [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((5, 2), (2, 2))]


@pytest.mark.parametrize("sa,sb", MATMUL_SHAPES)
def test_grad_matmul(rng, sa, sb):
    a = Tensor(rng.normal(size=sa), requires_grad=True)
    b = Tensor(rng.normal(size=sb), requires_grad=True)
    proj = rng.normal(size=np.matmul(a.data, b.data).shape)
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.matmul(a, b), proj)), [a, b])


@pytest.mark.parametrize("shape", [(2, 5), (6, 3), (1, 8)])
def test_grad_masked_softmax(rng, shape):
    x = Tensor(rng.normal(size=shape), requires_grad=True)
    mask = rng.random(shape) < 0.7
    mask[:, 0] = True  # no fully-masked rows
    proj = rng.normal(size=shape)
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.masked_softmax(x, mask), proj)), [x])


@pytest.mark.parametrize("shape", [(2, 5), (3, 4, 6), (1, 8)])
def test_grad_layer_norm(rng, shape):
    d = shape[-1]
    x = Tensor(rng.normal(size=shape), requires_grad=True)
    gamma = Tensor(rng.normal(size=d) + 1.0, requires_grad=True)
    beta = Tensor(rng.normal(size=d), requires_grad=True)
    proj = rng.normal(size=shape)
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.layer_norm(x, gamma, beta), proj)),
        [x, gamma, beta])


@pytest.mark.parametrize("b,t,ci,co,k", [(2, 6, 3, 4, 5), (1, 4, 2, 2, 3),
                                         (3, 5, 4, 3, 5)])
def test_grad_conv1d(rng, b, t, ci, co, k):
    x = Tensor(rng.normal(size=(b, t, ci)), requires_grad=True)
    w = Tensor(rng.normal(size=(k, ci, co)), requires_grad=True)
    bias = Tensor(rng.normal(size=co), requires_grad=True)
    proj = rng.normal(size=(b, t, co))
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.conv1d_same(x, w, bias), proj)),
        [x, w, bias])


@pytest.mark.parametrize("vocab,ids", [
    (5, [[0, 2, 2], [4, 1, 0]]),       # duplicates accumulate
    (3, [[1], [2]]),
    (7, [[6, 0, 5, 5]]),
])
def test_grad_embedding(rng, vocab, ids):
    table = Tensor(rng.normal(size=(vocab, 4)), requires_grad=True)
    ids = np.array(ids)
    proj = rng.normal(size=ids.shape + (4,))
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.embedding(table, ids), proj)), [table])


@pytest.mark.parametrize("shape", [(2, 3, 4), (1, 5, 2), (3, 2, 6)])
def test_grad_masked_mse(rng, shape):
    pred = Tensor(rng.normal(size=shape), requires_grad=True)
    target = rng.normal(size=shape)
    mask = rng.random(shape[:2]) < 0.8
    mask[:, 0] = True
    finite_diff_check(lambda: ad.masked_mse(pred, target, mask), [pred])


@pytest.mark.parametrize("shape,v", [((2, 3), 5), ((1, 4), 3), ((3, 2), 7)])
def test_grad_masked_nll(rng, shape, v):
    logits = Tensor(rng.normal(size=shape + (v,)), requires_grad=True)
    targets = rng.integers(0, v, size=shape)
    mask = rng.random(shape) < 0.8
    mask[:, 0] = True
    finite_diff_check(lambda: ad.masked_nll(logits, targets, mask), [logits])


@pytest.mark.parametrize("shape", [(2, 4), (3, 3), (1, 6)])
def test_grad_masked_bce(rng, shape):
    logits = Tensor(rng.normal(size=shape), requires_grad=True)
    targets = (rng.random(shape) < 0.3).astype(float)
    mask = rng.random(shape) < 0.8
    mask[:, 0] = True
    finite_diff_check(
        lambda: ad.masked_bce_logits(logits, targets, mask, pos_weight=5.0),
        [logits])


@pytest.mark.parametrize("shape", [(3,), (2, 4), (2, 3, 2)])
def test_grad_sigmoid_tanh_relu(rng, shape):
    proj = rng.normal(size=shape)
    for op in (ad.sigmoid, ad.tanh):
        x = Tensor(rng.normal(size=shape), requires_grad=True)
        finite_diff_check(lambda: ad.sum_all(ad.mul(op(x), proj)), [x])
    # keep relu inputs away from the kink
    x = Tensor(rng.normal(size=shape) + np.where(rng.random(shape) < 0.5, -1.0, 1.0) * 0.5,
               requires_grad=True)
    x.data[np.abs(x.data) < 1e-2] = 0.1
    finite_diff_check(lambda: ad.sum_all(ad.mul(ad.relu(x), proj)), [x])


@pytest.mark.parametrize("shapes", [((2, 3), (2, 3)), ((4, 1), (4, 5)),
                                    ((3, 2, 2), (1, 2, 2))])
def test_grad_add_mul_broadcast(rng, shapes):
    sa, sb = shapes
    a = Tensor(rng.normal(size=sa), requires_grad=True)
    b = Tensor(rng.normal(size=sb), requires_grad=True)
    proj = rng.normal(size=np.broadcast_shapes(sa, sb))
    finite_diff_check(lambda: ad.sum_all(ad.mul(ad.add(a, b), proj)), [a, b])
    finite_diff_check(lambda: ad.sum_all(ad.mul(ad.mul(a, b), proj)), [a, b])


def test_grad_structural_ops(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 2, 4)), requires_grad=True)
    proj = rng.normal(size=(2, 5, 4))
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.concat([a, b], axis=1), proj)), [a, b])
    proj_t = rng.normal(size=(4, 2, 3))
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.transpose(a, (2, 0, 1)), proj_t)), [a])
    proj_r = rng.normal(size=(6, 4))
    finite_diff_check(
        lambda: ad.sum_all(ad.mul(ad.reshape(a, (6, 4)), proj_r)), [a])
