"""Autodiff engine: forward values against independent oracles, gradients
against central finite differences, and the documented backward semantics."""

import numpy as np
import pytest

from cfchanpred import autodiff as ad
from cfchanpred.errors import DataError, NumericError, ShapeError

from gradcheck import check_grads, matmul_oracle


def test_matmul_forward_matches_triple_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m, k, n = rng.integers(1, 7, size=3)
        a = rng.normal(size=(m, k))
        b = rng.normal(size=(k, n))
        got = ad.matmul(ad.constant(a), ad.constant(b)).value
        np.testing.assert_allclose(got, matmul_oracle(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_batched_forward():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 3, 5))
    b = rng.normal(size=(5, 2))
    got = ad.matmul(ad.constant(a), ad.constant(b)).value
    for i in range(4):
        np.testing.assert_allclose(got[i], matmul_oracle(a[i], b), rtol=1e-12, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    a = ad.constant(np.zeros((2, 3)))
    b = ad.constant(np.zeros((4, 2)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        ad.matmul(a, b)


def test_elementwise_shape_error():
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        ad.add(ad.constant(np.zeros(2)), ad.constant(np.zeros(3)))


def test_softmax_rows_known_value():
    # softmax([0, ln 2]) = [1/3, 2/3]
    out = ad.softmax_rows(ad.constant(np.array([[0.0, np.log(2.0)]]))).value
    np.testing.assert_allclose(out, [[1.0 / 3.0, 2.0 / 3.0]], rtol=1e-12)


def test_softmax_rows_sum_to_one_and_stable():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 7)) * 200.0  # large magnitudes: max-subtraction must hold
    out = ad.softmax_rows(ad.constant(x)).value
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(5), rtol=1e-12)


def test_sqrt_eps_domain_error():
    with pytest.raises(NumericError):
        ad.sqrt_eps(ad.constant(np.array([-1.0])), eps=1e-12)


def test_as_finite_array_rejects_nan_inf():
    with pytest.raises(DataError):
        ad.as_finite_array(np.array([1.0, np.nan]))
    with pytest.raises(DataError):
        ad.as_finite_array(np.array([np.inf]))


def test_depthwise_conv1d_hand_value():
    # column [1,2,3] with kernel [1,1,1], zero same padding -> [3,6,5]
    x = ad.constant(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
    w = ad.constant(np.ones((3, 1)))
    out = ad.depthwise_conv1d(x, w).value
    np.testing.assert_allclose(out.reshape(-1), [3.0, 6.0, 5.0], rtol=1e-12)


def test_depthwise_conv1d_rejects_even_kernel():
    x = ad.constant(np.zeros((1, 4, 2)))
    with pytest.raises(ShapeError):
        ad.depthwise_conv1d(x, ad.constant(np.zeros((2, 2))))


def test_weighted_sum_hand_value():
    # [1, 2] . ([[1]], [[10]]) = [[21]]
    xs = [ad.constant(np.array([[1.0]])), ad.constant(np.array([[10.0]]))]
    w = ad.constant(np.array([1.0, 2.0]))
    np.testing.assert_allclose(ad.weighted_sum(xs, w).value, [[21.0]], rtol=1e-12)


def test_normalize_axis_hand_value():
    # column [0, 2]: mean 1, population std 1 -> [-1, 1] as eps -> 0
    x = ad.constant(np.array([[0.0], [2.0]]))
    out = ad.normalize_axis(x, axis=-2, eps=1e-15).value
    np.testing.assert_allclose(out, [[-1.0], [1.0]], rtol=1e-6)


def test_backward_requires_scalar_loss():
    x = ad.parameter(np.ones((2, 2)))
    y = ad.mul(x, x)
    with pytest.raises(ShapeError):
        ad.backward(y)


def test_backward_accumulates_across_calls():
    x = ad.parameter(np.array([3.0]))
    loss = ad.sum_all(ad.mul(x, x))
    ad.backward(loss)
    first = x.grad.copy()
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 2.0 * first, rtol=1e-12)
    x.zero_grad()
    assert x.grad is None


def test_backward_skips_non_grad_nodes():
    x = ad.parameter(np.array([2.0]))
    c = ad.constant(np.array([5.0]))
    loss = ad.sum_all(ad.mul(x, c))
    grads = ad.backward(loss)
    assert x in grads and c not in grads
    assert c.grad is None


def test_fanout_gradient_accumulation():
    # y = x*x + x: dL/dx = 2x + 1 through two uses of the same node
    x = ad.parameter(np.array([3.0]))
    loss = ad.sum_all(ad.add(ad.mul(x, x), x))
    grads = ad.backward(loss)
    np.testing.assert_allclose(grads[x], [7.0], rtol=1e-12)


def test_float32_graphs_stay_float32():
    x = ad.parameter(np.ones((2, 2), dtype=np.float32), dtype=np.float32)
    y = ad.scale(ad.relu(ad.add(x, 1.0)), 0.5)
    assert y.value.dtype == np.float32
    loss = ad.sum_all(y)
    grads = ad.backward(loss)
    assert grads[x].dtype == np.float32


def _op_cases(rng):
    """(name, params, build) triples covering every differentiable op."""
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4, 2)))
    yield "matmul", [a, b], lambda: ad.sum_all(ad.mul(ad.matmul(a, b), ad.matmul(a, b)))

    ab = ad.parameter(rng.normal(size=(2, 3, 4)))
    bb = ad.parameter(rng.normal(size=(2, 4, 3)))
    yield "bmm", [ab, bb], lambda: ad.sum_all(ad.mul(ad.bmm(ab, bb), ad.bmm(ab, bb)))

    s = ad.parameter(rng.normal(size=(3, 5)))
    yield "swap_last2", [s], lambda: ad.sum_all(ad.mul(ad.swap_last2(s), ad.swap_last2(s)))

    e1 = ad.parameter(rng.normal(size=(4, 3)))
    e2 = ad.parameter(rng.normal(size=(4, 3)))
    yield "add", [e1, e2], lambda: ad.sum_all(ad.mul(ad.add(e1, e2), ad.add(e1, e2)))
    yield "sub", [e1, e2], lambda: ad.sum_all(ad.mul(ad.sub(e1, e2), ad.sub(e1, e2)))
    yield "mul", [e1, e2], lambda: ad.sum_all(ad.mul(ad.mul(e1, e2), ad.mul(e1, e2)))

    r = ad.parameter(rng.normal(size=(4, 4)) + 0.1)  # keep clear of the relu kink
    yield "relu", [r], lambda: ad.sum_all(ad.mul(ad.relu(r), ad.relu(r)))

    x1 = ad.parameter(rng.normal(size=(3, 3)) * 0.5)
    yield "exp", [x1], lambda: ad.sum_all(ad.mul(ad.exp(x1), ad.exp(x1)))
    yield "tanh", [x1], lambda: ad.sum_all(ad.mul(ad.tanh(x1), ad.tanh(x1)))
    yield "sigmoid", [x1], lambda: ad.sum_all(ad.mul(ad.sigmoid(x1), ad.sigmoid(x1)))

    p = ad.parameter(np.abs(rng.normal(size=(3, 3))) + 0.5)
    yield "sqrt_eps", [p], lambda: ad.sum_all(ad.mul(ad.sqrt_eps(p, 1e-9), ad.sqrt_eps(p, 1e-9)))

    sm = ad.parameter(rng.normal(size=(3, 4)))
    smw = ad.constant(rng.normal(size=(3, 4)))
    yield "softmax_rows", [sm], lambda: ad.sum_all(ad.mul(ad.softmax_rows(sm), smw))

    ln = ad.parameter(rng.normal(size=(5, 3)))
    lnw = ad.constant(rng.normal(size=(5, 3)))
    yield "normalize_axis", [ln], lambda: ad.sum_all(ad.mul(ad.normalize_axis(ln, -2, 1e-6), lnw))

    rs = ad.parameter(rng.normal(size=(2, 6)))
    yield "reshape", [rs], lambda: ad.sum_all(ad.mul(ad.reshape(rs, (3, 4)), ad.reshape(rs, (3, 4))))

    c1 = ad.parameter(rng.normal(size=(2, 3)))
    c2 = ad.parameter(rng.normal(size=(2, 2)))
    cw = ad.constant(rng.normal(size=(2, 5)))
    yield "concat", [c1, c2], lambda: ad.sum_all(ad.mul(ad.concat([c1, c2], axis=1), cw))

    dx = ad.parameter(rng.normal(size=(2, 6, 3)))
    dw = ad.parameter(rng.normal(size=(3, 3)))
    dv = ad.constant(rng.normal(size=(2, 6, 3)))
    yield "depthwise_conv1d", [dx, dw], lambda: ad.sum_all(ad.mul(ad.depthwise_conv1d(dx, dw), dv))

    w1 = ad.parameter(rng.normal(size=(2, 3)))
    w2 = ad.parameter(rng.normal(size=(2, 3)))
    wv = ad.parameter(rng.normal(size=2))
    yield "weighted_sum", [w1, w2, wv], lambda: ad.sum_all(
        ad.mul(ad.weighted_sum([w1, w2], wv), ad.weighted_sum([w1, w2], wv)))

    sc = ad.parameter(rng.normal(size=(3, 2)))
    yield "scale", [sc], lambda: ad.sum_all(ad.mul(ad.scale(sc, 2.5), ad.scale(sc, 2.5)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, params, build in _op_cases(rng):
        try:
            check_grads(build, params, steps=(1e-5,), tol=1e-4)
        except AssertionError as err:
            raise AssertionError(f"{name}: {err}") from err
