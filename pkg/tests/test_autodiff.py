"""Finite-difference checks for every autodiff op and composite."""

import numpy as np
import pytest

from motionmask.autodiff import Tensor, log_softmax, softmax

RNG = np.random.default_rng(20240917)


def fd_check(fn, *shapes, eps=1e-6, tol=1e-6):
    """Central-difference check of d fn / d each input against the tape."""
    values = [RNG.normal(size=s) if s else np.array(RNG.normal()) for s in shapes]
    leaves = [Tensor(v.copy(), requires_grad=True) for v in values]
    out = fn(*leaves)
    assert out.shape == (), "fd_check wants scalar outputs"
    out.backward()
    for leaf, base in zip(leaves, values):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            for sign in (+1.0, -1.0):
                probe = base.copy().reshape(-1)
                probe[i] += sign * eps
                args = [Tensor(v) for v in values]
                args[leaves.index(leaf)] = Tensor(probe.reshape(base.shape))
                num_flat[i] += sign * fn(*args).data / (2 * eps)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
        assert (np.abs(analytic - numeric) / denom).max() < tol


def test_add_mul_sub_broadcast():
    fd_check(lambda a, b: ((a + b) * (a - b)).sum(), (3, 4), (4,))
    fd_check(lambda a, b: (a * b).sum(), (2, 1, 3), (4, 3))


def test_div_pow():
    fd_check(lambda a, b: (a / (b * b + 2.0)).sum(), (3, 3), (3, 3))
    fd_check(lambda a: ((a * a + 1.0) ** -0.5).sum(), (4,))
    fd_check(lambda a: ((a * a + 0.5) ** 3.0).sum(), (2, 2))


def test_matmul_all_arities():
    fd_check(lambda a, b: (a @ b).sum(), (3, 4), (4, 2))
    fd_check(lambda a, b: (a @ b).sum(), (2, 3, 4), (2, 4, 2))       # batched
    fd_check(lambda a, b: (a @ b).sum(), (2, 2, 3, 4), (4, 2))      # broadcast rhs
    fd_check(lambda a, b: (a @ b).sum(), (4,), (4, 3))              # vec @ mat
    fd_check(lambda a, b: (a @ b).sum(), (3, 4), (4,))              # mat @ vec
    fd_check(lambda a, b: a @ b, (4,), (4,))                        # dot


def test_elementwise_functions():
    fd_check(lambda a: a.exp().sum(), (3, 2))
    fd_check(lambda a: (a * a + 1.0).log().sum(), (3,))
    fd_check(lambda a: a.tanh().sum(), (2, 3))


def test_reductions_and_shapes():
    fd_check(lambda a: a.sum(axis=0).sum(), (3, 4))
    fd_check(lambda a: a.sum(axis=(0, 2)).sum(), (2, 3, 4))
    fd_check(lambda a: a.mean(axis=-1, keepdims=True).sum(), (3, 4))
    fd_check(lambda a: a.reshape(6, 2).sum(), (3, 4))
    fd_check(lambda a: a.transpose(1, 0, 2).sum(), (2, 3, 4))
    fd_check(lambda a: a.swapaxes(0, 1).sum(), (3, 4))


def test_getitem():
    fd_check(lambda a: a[1], (4,))
    fd_check(lambda a: a[1:3].sum(), (5,))
    fd_check(lambda a: a[2, 1], (3, 3))


def test_softmax_and_log_softmax():
    fd_check(lambda a: (softmax(a) * softmax(a)).sum(), (5,))
    fd_check(lambda a: log_softmax(a)[2], (5,))
    fd_check(lambda a: softmax(a, axis=0).sum(axis=1)[1], (4, 3))
    probs = softmax(Tensor(RNG.normal(size=(7,)))).data
    assert probs.min() >= 0 and abs(probs.sum() - 1.0) < 1e-12


def test_layer_norm_composite():
    def ln(x, gamma, beta):
        mu = x.mean(axis=-1, keepdims=True)
        c = x - mu
        var = (c * c).mean(axis=-1, keepdims=True)
        return (c * (var + 1e-6) ** -0.5 * gamma + beta).sum()
    fd_check(ln, (3, 5), (5,), (5,))


def test_attention_composite():
    def attn(x, wq, wk, wv):
        q, k, v = x @ wq, x @ wk, x @ wv
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(4.0))
        return (softmax(scores, axis=-1) @ v).sum()
    fd_check(attn, (2, 3, 4), (4, 4), (4, 4), (4, 4))


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = (x * x + x).sum()  # dy/dx = 2x + 1
    y.backward()
    assert np.allclose(x.grad, [5.0, 7.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_constants_collect_no_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.full(3, 2.0))
    (x * c).sum().backward()
    assert c.grad is None
    assert np.allclose(x.grad, 2.0)
