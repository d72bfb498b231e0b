"""Finite-difference and structural checks for the reverse-mode engine."""

import numpy as np
import pytest

from groundcxr.autodiff import (
    Tensor,
    check_gradient,
    concat,
    embedding,
    l2_normalize,
    log_softmax,
    no_grad,
    softmax,
    stack,
)


def leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def assert_grad_ok(func, params, tol=1e-6):
    errors = check_gradient(func, params)
    for name, err in errors.items():
        assert err <= tol, f"{name}: rel err {err:.3e}"


def test_add_mul_broadcasting():
    rng = np.random.default_rng(0)
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4)
    c = leaf(rng, 3, 1)
    assert_grad_ok(lambda: ((a + b) * c).sum(), {"a": a, "b": b, "c": c})


def test_sub_div_pow():
    rng = np.random.default_rng(1)
    a = leaf(rng, 2, 3, lo=0.5, hi=2.0)
    b = leaf(rng, 3, lo=0.5, hi=2.0)
    assert_grad_ok(lambda: ((a - b) / b + a ** 3).sum(), {"a": a, "b": b})


def test_matmul_batched():
    rng = np.random.default_rng(2)
    a = leaf(rng, 2, 3, 4)
    b = leaf(rng, 2, 4, 5)
    assert_grad_ok(lambda: (a @ b).sum(), {"a": a, "b": b})


def test_matmul_broadcast_left():
    rng = np.random.default_rng(3)
    a = leaf(rng, 3, 4)
    b = leaf(rng, 2, 4, 5)
    assert_grad_ok(lambda: (a @ b).sum(), {"a": a, "b": b})


def test_reshape_transpose_swapaxes():
    rng = np.random.default_rng(4)
    a = leaf(rng, 2, 3, 4)
    assert_grad_ok(
        lambda: (a.reshape(6, 4).transpose() + 1.0).sum()
        + (a.swapaxes(0, 2) * 2.0).sum(),
        {"a": a},
    )


def test_getitem_slice_and_advanced():
    rng = np.random.default_rng(5)
    a = leaf(rng, 4, 5)
    idx = np.array([0, 2, 2, 3])
    cols = np.array([1, 0, 4, 2])
    assert_grad_ok(lambda: a[1:, :3].sum() + a[idx, cols].sum(), {"a": a})


def test_reductions_axes():
    rng = np.random.default_rng(6)
    a = leaf(rng, 3, 4, 2)
    assert_grad_ok(
        lambda: a.sum(axis=1).mean() + a.mean(axis=(0, 2), keepdims=True).sum(),
        {"a": a},
    )


def test_elementwise_nonlinearities():
    rng = np.random.default_rng(7)
    a = leaf(rng, 3, 4, lo=0.2, hi=1.5)
    b = leaf(rng, 3, 4, lo=-2.0, hi=2.0)
    # keep relu inputs away from the kink
    b.data[np.abs(b.data) < 1e-3] = 0.5
    assert_grad_ok(
        lambda: (a.log() + a.sqrt() + a.exp()).sum()
        + (b.tanh() + b.relu() + b.gelu()).sum(),
        {"a": a, "b": b},
    )


def test_softmax_log_softmax_grads():
    rng = np.random.default_rng(8)
    a = leaf(rng, 2, 5)
    w = Tensor(rng.uniform(-1, 1, size=(2, 5)))
    assert_grad_ok(
        lambda: (softmax(a, axis=-1) * w).sum() + (log_softmax(a, axis=-1) * w).sum(),
        {"a": a},
    )


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(4, 7)) * 10)
    rows = softmax(x, axis=-1).data.sum(axis=-1)
    assert np.allclose(rows, 1.0, atol=1e-12)


def test_concat_stack():
    rng = np.random.default_rng(10)
    a = leaf(rng, 2, 3)
    b = leaf(rng, 2, 3)
    w = Tensor(rng.uniform(size=(4, 3)))
    ws = Tensor(rng.uniform(size=(2, 2, 3)))
    assert_grad_ok(
        lambda: (concat([a, b], axis=0) * w).sum() + (stack([a, b], axis=0) * ws).sum(),
        {"a": a, "b": b},
    )


def test_embedding_scatter():
    rng = np.random.default_rng(11)
    table = leaf(rng, 6, 3)
    ids = np.array([[0, 2, 2], [5, 0, 1]])
    assert_grad_ok(lambda: embedding(table, ids).sum(), {"table": table})


def test_l2_normalize_grad_and_norm():
    rng = np.random.default_rng(12)
    a = leaf(rng, 3, 4)
    w = Tensor(rng.uniform(size=(3, 4)))
    assert_grad_ok(lambda: (l2_normalize(a) * w).sum(), {"a": a})
    norms = np.linalg.norm(l2_normalize(a).data, axis=-1)
    assert np.allclose(norms, 1.0, atol=1e-9)


def test_reused_node_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = (x * x) + (x * x)
    y.sum().backward()
    assert np.allclose(x.grad, 4 * x.data)


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    z = (x * 3.0).sum()
    z.backward()
    assert np.allclose(x.grad, 3.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_unbroadcast_shapes():
    a = Tensor(np.ones((1, 3)), requires_grad=True)
    b = Tensor(np.ones((4, 3)), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == (1, 3)
    assert np.allclose(a.grad, 4.0)
    assert b.grad.shape == (4, 3)


def test_check_gradient_subsampling_matches_full():
    rng = np.random.default_rng(13)
    a = leaf(rng, 4, 4)
    full = check_gradient(lambda: (a * a).sum(), {"a": a})
    sampled = check_gradient(lambda: (a * a).sum(), {"a": a}, max_entries=5)
    assert full["a"] <= 1e-8 and sampled["a"] <= 1e-8
