import numpy as np
import pytest
import scipy.sparse
import scipy.sparse.linalg
from hypothesis import given, settings, strategies as st

from exprb.discretization import (Grid1D, assemble_operators, build_grid, jacobian, max_eigenvalue,
                                  project)


def test_grid_spacing():
    g = build_grid(999)
    assert g.h == pytest.approx(1e-3, rel=1e-15)
    assert g.nodes[0] == pytest.approx(1e-3) and g.nodes[-1] == pytest.approx(0.999)


def test_grid_rejects_small():
    with pytest.raises(ValueError):
        Grid1D(2, 0.0, 1.0)
    with pytest.raises(ValueError):
        Grid1D(5, 1.0, 1.0)


def test_stencil_rows():
    ops = assemble_operators(build_grid(9))
    D = ops.a_h0.todense() * ops.grid.h ** 2
    assert np.allclose(D[0, :3], [-2, 1, 0])
    assert np.allclose(D[4, 3:6], [1, -2, 1])


def test_exact_on_quadratics():
    # A u + C g reproduces u_xx exactly for quadratic u
    g = build_grid(19, (0.0, 2.0))
    ops = assemble_operators(g)
    u = lambda x: 3 * x ** 2 - x + 0.5
    Au = ops.a_h0.matvec(project(u, g)) + ops.c_h(u(0.0), u(2.0))
    assert np.allclose(Au, 6.0, atol=1e-9)


def test_second_order_consistency():
    errs = []
    for N in (49, 99, 199):
        g = build_grid(N)
        ops = assemble_operators(g)
        Au = ops.a_h0.matvec(project(np.cos, g)) + ops.c_h(np.cos(0.0), np.cos(1.0))
        errs.append(np.max(np.abs(Au + np.cos(g.nodes))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2) < 0.1)


def test_c_h_only_touches_ends():
    ops = assemble_operators(build_grid(7))
    v = ops.c_h(2.0, 3.0)
    h2 = ops.grid.h ** 2
    assert v[0] == pytest.approx(2 / h2) and v[-1] == pytest.approx(3 / h2)
    assert np.all(v[1:-1] == 0)
    assert ops.d_h is None


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 60), sigma=st.floats(1e-6, 1.0), seed=st.integers(0, 10 ** 6))
def test_shifted_solve(n, sigma, seed):
    rng = np.random.default_rng(seed)
    ops = assemble_operators(build_grid(n))
    J = jacobian(ops, rng.uniform(-2, 2, n))
    b = rng.standard_normal(n)
    x = J.solve_shifted(sigma, b)
    assert np.allclose(x - sigma * J.matvec(x), b, atol=1e-9 * (1 + np.abs(b).max()))


def test_jacobian_diag_shift():
    ops = assemble_operators(build_grid(20))
    U = np.linspace(-1, 1, 20)
    J = jacobian(ops, 2 * U)
    assert np.allclose(J.todense() - ops.a_h0.todense(), np.diag(2 * U))
    assert np.array_equal(J.diag_shift, 2 * U)
    with pytest.raises(ValueError):
        jacobian(ops, np.ones(19))


def test_max_eigenvalue_against_lanczos():
    ops = assemble_operators(build_grid(300))
    J = jacobian(ops, 2 * np.cos(ops.grid.nodes))
    S = scipy.sparse.diags([J.off, J.diag, J.off], [-1, 0, 1])
    lanczos = scipy.sparse.linalg.eigsh(S, k=1, which="LA", return_eigenvectors=False)[0]
    assert max_eigenvalue(J) == pytest.approx(lanczos, rel=1e-8)
    # laplacian: -pi^2 to second order
    assert max_eigenvalue(ops.a_h0) == pytest.approx(-np.pi ** 2, rel=1e-4)
