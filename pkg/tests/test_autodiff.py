import numpy as np
import pytest

from meeqa_toolkit import autodiff as ad
from meeqa_toolkit.autodiff import Tensor
from meeqa_toolkit.errors import DegenerateMaskError, NumericError

H = 1e-6


def gradcheck(fn, *arrays, tol=1e-6):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    ad.backward(out)
    for k, leaf in enumerate(leaves):
        numeric = np.zeros_like(arrays[k])
        for idx in np.ndindex(arrays[k].shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][idx] += H
            minus[k][idx] -= H
            f_plus = fn(*map(Tensor, plus)).data
            f_minus = fn(*map(Tensor, minus)).data
            numeric[idx] = (f_plus - f_minus) / (2 * H)
        got = leaf.grad if leaf.grad is not None else np.zeros_like(numeric)
        np.testing.assert_allclose(got, numeric, rtol=tol, atol=tol)


rng = np.random.default_rng(7)


def r(*shape):
    return rng.normal(size=shape)


@pytest.mark.parametrize("name, fn, shapes", [
    ("add-broadcast", lambda a, b: (a + b).sum(), [(3, 4), (4,)]),
    ("sub", lambda a, b: (a - b * b).sum(), [(2, 3), (2, 3)]),
    ("div", lambda a, b: (a / (b * b + 1.0)).sum(), [(3,), (3,)]),
    ("matmul", lambda a, b: ((a @ b) * (a @ b)).sum(), [(2, 3, 4), (4, 5)]),
    ("matmul-vector", lambda a, b: ad.tanh(a @ b).sum(), [(2, 3, 4), (4,)]),
    ("batched-matmul", lambda a, b: (a @ b).mean(), [(2, 3, 4), (2, 4, 2)]),
    ("exp-log", lambda a: ad.log(ad.exp(a) + 1.0).sum(), [(5,)]),
    ("gelu", lambda a: ad.gelu(a).sum(), [(6,)]),
    ("transpose-reshape", lambda a: (ad.transpose(a, (0, 2, 1)).reshape(2, 12) * np.arange(24.).reshape(2, 12)).sum(), [(2, 3, 4)]),
    ("getitem", lambda a: (a[np.array([0, 1, 1]), np.array([2, 0, 2])] * np.array([1., 2., 3.])).sum(), [(2, 3)]),
    ("softmax", lambda a: (ad.masked_softmax(a, None) * np.arange(4.)).sum(), [(3, 4)]),
    ("layer-norm", lambda a, g, b: (ad.layer_norm(a, g, b) * np.arange(5.)).sum(), [(3, 5), (5,), (5,)]),
    ("mean-axis", lambda a: (a.mean(axis=1) * np.array([1., -2.])).sum(), [(2, 3)]),
])
def test_vjp_against_finite_differences(name, fn, shapes):
    gradcheck(fn, *[r(*s) for s in shapes])


def test_take_rows_accumulates_repeats():
    table = r(5, 3)
    ids = np.array([[1, 1, 4]])
    gradcheck(lambda t: (ad.take_rows(t, ids) * np.arange(9.).reshape(1, 3, 3)).sum(), table)


def test_masked_log_softmax():
    x = r(2, 5)
    mask = np.array([[1, 1, 0, 1, 0], [0, 1, 1, 1, 1]], bool)
    weights = r(2, 5)
    gradcheck(lambda a: (ad.masked_log_softmax(a, mask) * np.where(mask, weights, 0.0)).sum(), x)
    t = Tensor(x, requires_grad=True)
    out = ad.masked_log_softmax(t, mask)
    assert (out.data[~mask] == ad.MASK_FILL).all()
    np.testing.assert_allclose(np.exp(out.data).sum(axis=-1), 1.0)
    (out * weights).sum().backward()
    assert (t.grad[~mask] == 0.0).all()


def test_masked_softmax_gradient_zero_on_masked():
    x = Tensor(r(4), requires_grad=True)
    mask = np.array([True, False, True, True])
    p = ad.masked_softmax(x, mask)
    assert p.data[1] == 0.0
    (p * np.array([1., 2., 3., 4.])).sum().backward()
    assert x.grad[1] == 0.0


def test_fully_masked_row():
    with pytest.raises(DegenerateMaskError):
        ad.masked_log_softmax(Tensor(r(2, 3)), np.array([[1, 0, 0], [0, 0, 0]], bool))


def test_non_finite_gradient_reports_path():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    with np.errstate(divide="ignore"):
        y = ad.log(x).sum()
    with pytest.raises(NumericError) as info:
        ad.backward(y)
    assert "log" in str(info.value)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x + x
    y.backward()
    assert x.grad == pytest.approx(7.0)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        ad.backward(Tensor(np.ones(2), requires_grad=True) * 2.0)
