"""Reverse-mode gradient checks against analytic and finite-difference oracles."""

import numpy as np
import pytest

from mfvi import autodiff as ad
from mfvi.errors import InvalidInputError
from mfvi.rng import RngStream


def test_constant_loss_has_zero_gradients():
    w = ad.Var(np.array([1.0, -2.0, 3.0]))
    loss = ad.mean_all(ad.mul(ad.const(np.zeros(3)), w))
    loss.backward()
    assert np.all(w.grad == 0.0)


def test_linear_quadratic_gradient_matches_closed_form():
    # loss = ||x W - t||^2 for one linear layer: dL/dW = 2 x^T (x W - t)
    rng = RngStream(7)
    x = rng.derive(0).standard_normal((4, 3))
    t = rng.derive(1).standard_normal((4, 2))
    W_val = rng.derive(2).standard_normal((3, 2))
    W = ad.Var(W_val)
    resid = ad.sub(ad.matmul(ad.const(x), W), ad.const(t))
    loss = ad.sum_all(ad.square(resid))
    loss.backward()
    expected = 2.0 * x.T @ (x @ W_val - t)
    np.testing.assert_allclose(W.grad, expected, rtol=1e-12)


def _fd_grad(f, flat, h=1e-5):
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composed_ops_match_finite_differences(seed):
    rng = RngStream(seed)
    x = rng.derive("x").standard_normal((3, 4))
    flat0 = rng.derive("w").standard_normal(4 * 4) * 0.4

    def value_and_grad(flat):
        W = ad.Var(flat.reshape(4, 4))
        h = ad.tanh(ad.matmul(ad.const(x), W))
        a = ad.slice_cols(h, 0, 2)
        b = ad.clip(ad.slice_cols(h, 2, 4), -0.5, 0.5)
        mixed = ad.concat_cols([ad.exp(a), ad.mul(b, b)])
        loss = ad.mean_all(ad.add(ad.sum_cols(ad.square(mixed)), ad.relu(ad.sum_cols(h))))
        loss.backward()
        return float(loss.value), W.grad.ravel()

    val, grad = value_and_grad(flat0)
    num = _fd_grad(lambda f: value_and_grad(f)[0], flat0)
    rel = np.abs(grad - num) / np.maximum(np.abs(grad) + np.abs(num), 1e-8)
    assert rel.max() < 1e-6


def test_backward_rejects_non_scalar():
    v = ad.Var(np.ones((2, 2)))
    with pytest.raises(InvalidInputError):
        ad.square(v).backward()


def test_python_scalars_do_not_promote_float32():
    v = ad.Var(np.ones((2, 2), dtype=np.float32))
    out = (-v) * 0.5 + 1.0 - 0.25
    assert out.value.dtype == np.float32


def test_repeated_subexpression_accumulates():
    v = ad.Var(np.array([3.0]))
    loss = ad.sum_all(ad.mul(v, v))
    loss.backward()
    np.testing.assert_allclose(v.grad, [6.0])
