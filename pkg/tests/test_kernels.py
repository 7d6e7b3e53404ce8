"""Cross-checks between the numba and numpy kernel backends."""

import numpy as np
import pytest

from sithlm import kernels


def both(name):
    impls = kernels.IMPLEMENTATIONS[name]
    if impls["numba"] is None:
        pytest.skip("numba backend unavailable")
    return impls["numpy"], impls["numba"]


def test_conv_forward_agrees(rng):
    f_np, f_nb = both("conv_forward")
    weights = rng.random((7, 33))
    hist = rng.standard_normal((3, 33, 12))
    np.testing.assert_allclose(f_nb(weights, hist), f_np(weights, hist),
                               rtol=1e-13, atol=1e-15)


def test_conv_backward_agrees(rng):
    f_np, f_nb = both("conv_backward")
    weights = rng.random((7, 33))
    grad = rng.standard_normal((3, 7, 12))
    np.testing.assert_allclose(f_nb(weights, grad), f_np(weights, grad),
                               rtol=1e-13, atol=1e-15)


def test_gather_rows_agrees(rng):
    f_np, f_nb = both("gather_rows")
    table = rng.standard_normal((50, 8))
    ids = rng.integers(-1, 50, size=(4, 21)).astype(np.int64)
    np.testing.assert_array_equal(f_nb(table, ids), f_np(table, ids))


def test_gather_pad_rows_are_zero(rng):
    table = rng.standard_normal((10, 4))
    ids = np.array([[0, -1, 9]])
    out = kernels.gather_rows(table, ids)
    np.testing.assert_array_equal(out[0, 1], 0.0)
    np.testing.assert_array_equal(out[0, 0], table[0])
    np.testing.assert_array_equal(out[0, 2], table[9])


def test_scatter_add_agrees_with_duplicates(rng):
    f_np, f_nb = both("scatter_add_rows")
    ids = rng.integers(-1, 6, size=(5, 17)).astype(np.int64)
    grad_rows = rng.standard_normal((5, 17, 3))
    a = np.zeros((6, 3))
    b = np.zeros((6, 3))
    f_np(a, ids, grad_rows)
    f_nb(b, ids, grad_rows)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_scatter_skips_pad_rows():
    grad = np.zeros((4, 2))
    ids = np.array([[-1, 2]])
    rows = np.ones((1, 2, 2))
    kernels.scatter_add_rows(grad, ids, rows)
    np.testing.assert_array_equal(grad[2], [1.0, 1.0])
    assert grad.sum() == 2.0


def test_adamw_update_matches_reference(rng):
    # manual single-parameter reference of the decoupled-decay update
    p = np.array([1.0])
    g = np.array([0.0])
    m = np.zeros(1)
    v = np.zeros(1)
    kernels.adamw_update(p, g, m, v, lr=0.1, beta1=0.9, beta2=0.95,
                         eps=1e-8, weight_decay=0.1, step=1)
    # zero gradient: pure decay, p' = p - lr * wd * p
    assert p[0] == pytest.approx(0.99, rel=1e-12)

    p2 = rng.standard_normal(100)
    g2 = rng.standard_normal(100)
    m2 = rng.standard_normal(100) * 0.01
    v2 = np.abs(rng.standard_normal(100)) * 0.01
    p_ref, m_ref, v_ref = p2.copy(), m2.copy(), v2.copy()
    kernels.adamw_update(p2, g2, m2, v2, lr=1e-3, beta1=0.9, beta2=0.95,
                         eps=1e-8, weight_decay=0.1, step=7)
    m_ref = 0.9 * m_ref + 0.1 * g2
    v_ref = 0.95 * v_ref + 0.05 * g2 * g2
    mhat = m_ref / (1 - 0.9 ** 7)
    vhat = v_ref / (1 - 0.95 ** 7)
    p_ref -= 1e-3 * (mhat / (np.sqrt(vhat) + 1e-8) + 0.1 * p_ref)
    np.testing.assert_allclose(p2, p_ref, rtol=1e-12)
    np.testing.assert_allclose(m2, m_ref, rtol=1e-12)
    np.testing.assert_allclose(v2, v_ref, rtol=1e-12)
