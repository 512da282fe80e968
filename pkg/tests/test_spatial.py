import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2subdiff.spatial import (
    SpatialGrid1D,
    assemble_elliptic,
    discrete_sine_eigenpairs,
    inner,
    l2_norm,
    solve_shifted,
    thomas,
)


def test_unit_stencil():
    op = assemble_elliptic(SpatialGrid1D(1.0, 3))
    np.testing.assert_allclose(op.diag, 32.0)
    np.testing.assert_allclose(op.off, -16.0)
    dense = op.to_dense()
    np.testing.assert_array_equal(dense, dense.T)
    assert np.all(dense.sum(axis=1) >= 0)


def test_zero_vector():
    op = assemble_elliptic(SpatialGrid1D(1.0, 9), lambda x: 1 + x)
    np.testing.assert_array_equal(op.apply(np.zeros(9)), 0.0)


def test_sine_consistency_second_order():
    errs = []
    for N in (31, 63, 127):
        g = SpatialGrid1D(1.0, N)
        op = assemble_elliptic(g)
        u = np.sin(math.pi * g.nodes)
        errs.append(np.abs(op.apply(u) - math.pi**2 * u).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_variable_coefficient_stencil():
    g = SpatialGrid1D(2.0, 5)
    a = lambda x: 1.0 + x**2  # noqa: E731
    op = assemble_elliptic(g, a)
    u = np.random.default_rng(1).normal(size=5)
    padded = np.concatenate([[0.0], u, [0.0]])
    x_half = g.midpoints
    ref = np.array(
        [
            (-a(x_half[i + 1]) * (padded[i + 2] - padded[i + 1]) + a(x_half[i]) * (padded[i + 1] - padded[i])) / g.h**2
            for i in range(5)
        ]
    )
    np.testing.assert_allclose(op.apply(u), ref, rtol=1e-13)
    np.testing.assert_allclose(op.to_dense() @ u, ref, rtol=1e-12)
    assert not op.constant


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        SpatialGrid1D(1.0, 0)
    with pytest.raises(ValueError):
        SpatialGrid1D(0.0, 3)
    with pytest.raises(ValueError):
        assemble_elliptic(SpatialGrid1D(1.0, 4), lambda x: x - 0.5)
    with pytest.raises(ValueError):
        assemble_elliptic(SpatialGrid1D(1.0, 4), 0.0)
    with pytest.raises(ValueError):
        solve_shifted(assemble_elliptic(SpatialGrid1D(1.0, 4)), 0.0, np.ones(4))


def test_eigenpairs_small_grid():
    mu, V = discrete_sine_eigenpairs(SpatialGrid1D(1.0, 2))
    np.testing.assert_allclose(mu, [9.0, 27.0], rtol=1e-14)
    assert V.shape == (2, 2)


@pytest.mark.parametrize("N, X", [(7, 1.0), (50, 2.5), (300, 1.0)])
def test_eigenpairs_residual(N, X):
    g = SpatialGrid1D(X, N)
    op = assemble_elliptic(g)
    mu, V = discrete_sine_eigenpairs(g, op)
    for k in range(N):
        res = np.linalg.norm(op.apply(V[:, k]) - mu[k] * V[:, k]) / np.linalg.norm(V[:, k])
        assert res <= 1e-10 * mu[k]


def test_eigenvalue_limit():
    mu1 = [discrete_sine_eigenpairs(SpatialGrid1D(2.0, N))[0][0] for N in (10, 100, 1000)]
    errs = np.abs(np.array(mu1) - (math.pi / 2.0) ** 2)
    assert errs[2] < errs[1] < errs[0] and errs[2] < 1e-5


def test_eigenpairs_reject_variable_coefficient():
    g = SpatialGrid1D(1.0, 5)
    with pytest.raises(ValueError):
        discrete_sine_eigenpairs(g, assemble_elliptic(g, lambda x: 1 + x))
    with pytest.raises(ValueError):
        discrete_sine_eigenpairs(g, assemble_elliptic(g, 2.0))


def test_shifted_solve_eigenvector():
    g = SpatialGrid1D(1.0, 40)
    op = assemble_elliptic(g)
    mu, V = discrete_sine_eigenpairs(g)
    c = 3.5
    np.testing.assert_allclose(solve_shifted(op, c, (c + mu[0]) * V[:, 0]), V[:, 0], rtol=1e-12, atol=1e-14)


def test_large_shift_limit():
    g = SpatialGrid1D(1.0, 20)
    op = assemble_elliptic(g)
    rhs = np.linspace(1, 2, 20)
    c = 1e14
    np.testing.assert_allclose(solve_shifted(op, c, rhs), rhs / c, rtol=1e-9)


def test_single_node():
    g = SpatialGrid1D(1.0, 1)
    op = assemble_elliptic(g)
    np.testing.assert_allclose(solve_shifted(op, 1.0, np.array([9.0])), [1.0])


def test_matrix_rhs_solve():
    g = SpatialGrid1D(1.0, 30)
    op = assemble_elliptic(g, lambda x: 2 + np.cos(x))
    fac = op.factor_shifted(2.0)
    W = np.random.default_rng(3).normal(size=(30, 4))
    X = fac.solve(fac.matvec(W))
    np.testing.assert_allclose(X, W, rtol=1e-11, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    N=st.integers(2, 200),
    c=st.floats(1e-3, 1e4),
    seed=st.integers(0, 2**32 - 1),
)
def test_solve_matches_thomas_and_residual(N, c, seed):
    rng = np.random.default_rng(seed)
    g = SpatialGrid1D(1.0, N)
    op = assemble_elliptic(g, lambda x: 0.5 + x)
    w = rng.normal(size=N)
    rhs = c * w + op.apply(w)
    u = solve_shifted(op, c, rhs)
    ref = thomas(op.off, op.diag + c, op.off, rhs)
    np.testing.assert_allclose(u, ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())
    res = np.linalg.norm(c * u + op.apply(u) - rhs)
    assert res <= 1e-12 * (np.linalg.norm(rhs) + c * np.linalg.norm(u))


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 80), seed=st.integers(0, 2**32 - 1))
def test_symmetry_and_positivity(N, seed):
    rng = np.random.default_rng(seed)
    g = SpatialGrid1D(1.3, N)
    op = assemble_elliptic(g, lambda x: 1 + np.sin(x) ** 2)
    u, w = rng.normal(size=(2, N))
    lhs, rhs = inner(op.apply(u), w, g), inner(u, op.apply(w), g)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
    assert inner(op.apply(u), u, g) > 0


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 80), c=st.floats(1e-2, 1e3), seed=st.integers(0, 2**32 - 1))
def test_discrete_maximum_principle(N, c, seed):
    rng = np.random.default_rng(seed)
    g = SpatialGrid1D(1.0, N)
    op = assemble_elliptic(g, lambda x: 1 + x)
    u = solve_shifted(op, c, rng.uniform(0, 1, size=N))
    assert np.all(u >= -1e-14 * np.abs(u).max())


def test_norms():
    g = SpatialGrid1D(1.0, 3)
    u = np.array([1.0, 2.0, 2.0])
    assert l2_norm(u, g) == pytest.approx(math.sqrt(0.25 * 9))
    assert inner(u, u, g) == pytest.approx(2.25)
