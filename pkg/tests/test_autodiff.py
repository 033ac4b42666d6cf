"""Every primitive's backward pass is audited against central finite
differences computed from nothing but the forward evaluation."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtnc import autodiff as ad


def numeric_grad(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar-valued f at x, coordinate by coordinate."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = f(x)
        flat[i] = keep - step
        down = f(x)
        flat[i] = keep
        gf[i] = (up - down) / (2.0 * step)
    return g


def check_unary(op, x: np.ndarray, atol: float = 1e-7):
    p = ad.parameter(x.copy())
    out = ad.tsum(op(p) * ad.constant(np.cos(np.arange(op(p).value.size)).reshape(op(p).value.shape)))
    out.backward()
    weights = np.cos(np.arange(op(p).value.size)).reshape(op(p).value.shape)
    num = numeric_grad(lambda v: float((op(ad.constant(v)).value * weights).sum()), x.copy())
    np.testing.assert_allclose(p.grad, num, atol=atol)


RNG = np.random.default_rng(0)


@pytest.mark.parametrize(
    "op,x",
    [
        (ad.relu, RNG.standard_normal((3, 4)) + 0.3),
        (ad.sigmoid, RNG.standard_normal((2, 5))),
        (ad.tanh, RNG.standard_normal((4,))),
        (ad.exp, RNG.standard_normal((3, 2))),
        (ad.log, RNG.random((3, 3)) + 0.5),
        (ad.sqrt, RNG.random((2, 2)) + 0.5),
        (ad.square, RNG.standard_normal((5,))),
        (ad.neg, RNG.standard_normal((2, 3))),
        (lambda t: ad.clip(t, -0.5, 0.5), RNG.standard_normal((4, 4))),
        (lambda t: ad.reshape(t, (6,)), RNG.standard_normal((2, 3))),
        (ad.swap_last_axes, RNG.standard_normal((2, 3, 4))),
        (lambda t: ad.tsum(t, axis=1), RNG.standard_normal((3, 4))),
        (lambda t: ad.tmean(t, axis=0), RNG.standard_normal((3, 4))),
        (ad.tsum, RNG.standard_normal((2, 2, 2))),
        (ad.tmean, RNG.standard_normal((3, 3))),
        (lambda t: t[1:], RNG.standard_normal((4, 2))),
    ],
)
def test_unary_backward_matches_finite_differences(op, x):
    check_unary(op, x)


def check_binary(op, a: np.ndarray, b: np.ndarray, atol: float = 1e-6):
    pa, pb = ad.parameter(a.copy()), ad.parameter(b.copy())
    ad.tsum(op(pa, pb)).backward()
    na = numeric_grad(lambda v: float(op(ad.constant(v), ad.constant(b)).value.sum()), a.copy())
    nb = numeric_grad(lambda v: float(op(ad.constant(a), ad.constant(v)).value.sum()), b.copy())
    np.testing.assert_allclose(pa.grad, na, atol=atol)
    np.testing.assert_allclose(pb.grad, nb, atol=atol)


@pytest.mark.parametrize(
    "op,a,b",
    [
        (ad.add, RNG.standard_normal((3, 4)), RNG.standard_normal((3, 4))),
        (ad.add, RNG.standard_normal((3, 4)), RNG.standard_normal((4,))),  # broadcast
        (ad.add, RNG.standard_normal((2, 1, 4)), RNG.standard_normal((3, 1))),
        (ad.mul, RNG.standard_normal((2, 3)), RNG.standard_normal((2, 3))),
        (ad.mul, RNG.standard_normal((2, 3)), RNG.standard_normal((3,))),
        (ad.div, RNG.standard_normal((3, 3)), RNG.random((3, 3)) + 1.0),
        (ad.matmul, RNG.standard_normal((3, 4)), RNG.standard_normal((4, 2))),
        (ad.matmul, RNG.standard_normal((2, 3, 4)), RNG.standard_normal((4, 5))),
        (ad.matmul, RNG.standard_normal((2, 5, 3, 4)), RNG.standard_normal((4, 2))),
    ],
)
def test_binary_backward_matches_finite_differences(op, a, b):
    check_binary(op, a, b)


def test_concat_backward():
    a = RNG.standard_normal((2, 3))
    b = RNG.standard_normal((2, 5))
    pa, pb = ad.parameter(a.copy()), ad.parameter(b.copy())
    weights = RNG.standard_normal((2, 8))
    ad.tsum(ad.concat([pa, pb], axis=1) * ad.constant(weights)).backward()
    np.testing.assert_allclose(pa.grad, weights[:, :3])
    np.testing.assert_allclose(pb.grad, weights[:, 3:])


def test_stack_backward():
    parts = [ad.parameter(RNG.standard_normal(4)) for _ in range(3)]
    weights = RNG.standard_normal((3, 4))
    ad.tsum(ad.stack(parts, axis=0) * ad.constant(weights)).backward()
    for p, row in zip(parts, weights):
        np.testing.assert_allclose(p.grad, row)


def test_gather_rows_backward():
    x = RNG.standard_normal((4, 5))
    cols = np.array([1, 0, 4, 2])
    p = ad.parameter(x.copy())
    ad.tsum(ad.gather_rows(p, cols)).backward()
    expected = np.zeros_like(x)
    expected[np.arange(4), cols] = 1.0
    np.testing.assert_allclose(p.grad, expected)


def test_affine_backward():
    x, w, b = RNG.standard_normal((4, 3)), RNG.standard_normal((3, 2)), RNG.standard_normal(2)
    px, pw, pb = ad.parameter(x.copy()), ad.parameter(w.copy()), ad.parameter(b.copy())
    ad.tsum(ad.affine(px, pw, pb)).backward()
    np.testing.assert_allclose(pw.grad, numeric_grad(
        lambda v: float((x @ v + b).sum()), w.copy()), atol=1e-6)
    np.testing.assert_allclose(pb.grad, np.full(2, 4.0))
    np.testing.assert_allclose(px.grad, numeric_grad(
        lambda v: float((v @ w + b).sum()), x.copy()), atol=1e-6)


def test_cross_entropy_matches_finite_differences():
    logits = RNG.standard_normal((5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    p = ad.parameter(logits.copy())
    ad.cross_entropy(p, labels).backward()
    num = numeric_grad(
        lambda v: float(ad.cross_entropy(ad.constant(v), labels).value), logits.copy()
    )
    np.testing.assert_allclose(p.grad, num, atol=1e-7)


def test_cross_entropy_known_value():
    # uniform logits over c classes: loss = ln c regardless of labels
    logits = np.zeros((4, 3))
    labels = np.array([0, 1, 2, 0])
    loss = ad.cross_entropy(ad.constant(logits), labels)
    assert loss.value == pytest.approx(np.log(3.0), abs=1e-15)


def test_log_softmax_rows_normalize():
    x = RNG.standard_normal((6, 4)) * 30.0  # large logits stay finite
    out = ad.log_softmax(ad.constant(x)).value
    np.testing.assert_allclose(np.exp(out).sum(axis=1), np.ones(6), atol=1e-12)


def test_sigmoid_value_extremes_stay_finite():
    v = ad.sigmoid_value(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
    assert np.all(np.isfinite(v))
    assert v[0] == 0.0 and v[-1] == 1.0
    assert v[2] == 0.5


def test_constant_subgraphs_fold():
    out = ad.matmul(ad.constant(RNG.standard_normal((2, 2))),
                    ad.constant(RNG.standard_normal((2, 2))))
    assert not out.requires_grad
    assert out.parents == ()
    assert out.backward_fn is None


def test_gradients_accumulate_across_reuse():
    p = ad.parameter(np.array([2.0, 3.0]))
    ad.tsum(p * p + p).backward()  # d/dp (p^2 + p) = 2p + 1
    np.testing.assert_allclose(p.grad, np.array([5.0, 7.0]))


def test_backward_requires_scalar():
    p = ad.parameter(np.ones(3))
    with pytest.raises(ValueError):
        (p * p).backward()


def test_operator_sugar_treats_plain_arrays_as_constants():
    p = ad.parameter(np.array([1.0, 2.0]))
    out = (2.0 * p - np.array([1.0, 1.0])) / 2.0
    np.testing.assert_allclose(out.value, np.array([0.5, 1.5]))
    ad.tsum(out).backward()
    np.testing.assert_allclose(p.grad, np.array([1.0, 1.0]))


@settings(max_examples=25, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    seed=st.integers(0, 2**31),
)
def test_add_broadcast_row_vector_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rows, cols))
    b = rng.standard_normal((cols,))
    pa, pb = ad.parameter(a), ad.parameter(b)
    ad.tsum(ad.add(pa, pb)).backward()
    np.testing.assert_allclose(pa.grad, np.ones((rows, cols)))
    np.testing.assert_allclose(pb.grad, np.full(cols, float(rows)))
