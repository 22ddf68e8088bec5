import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
import scipy.sparse
from hypothesis import given, settings, strategies as st

from exprb.discretization import assemble_operators, build_grid
from exprb.phi import (DenseLimitError, KrylovConvergenceError, PhiEngine, PhiRequest, as_operator,
                       phi_combination, phi_dense, phi_scalar, phi_scalar_array)


def phi_quad(z, j):
    # integral definition, j >= 1
    f = lambda s: math.exp((1 - s) * z) * s ** (j - 1) / math.factorial(j - 1)
    return scipy.integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("j", [0, 1, 2, 3])
def test_phi_at_zero(j):
    assert phi_scalar(0.0, j) == pytest.approx(1 / math.factorial(j), rel=1e-15)


def test_phi1_closed_form():
    assert phi_scalar(1.0, 1) == pytest.approx(math.e - 1, rel=1e-14)


def test_phi_against_quadrature():
    assert phi_scalar(-10.0, 2) == pytest.approx(phi_quad(-10.0, 2), abs=1e-12)


@pytest.mark.parametrize("z", [-0.999, -0.3, 1e-6, 0.5, 0.9999, -1.0, -1.5, 3.0])
@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_phi_both_branches_match_quadrature(z, j):
    assert phi_scalar(z, j) == pytest.approx(phi_quad(z, j), rel=1e-12, abs=1e-14)


def test_phi_negative_index():
    with pytest.raises(ValueError):
        phi_scalar(0.5, -1)


def test_phi_array_matches_scalar():
    z = np.linspace(-20, 2, 57)
    for j in range(5):
        ref = np.array([phi_scalar(v, j) for v in z])
        assert np.allclose(phi_scalar_array(z, j), ref, rtol=1e-13, atol=0)


@settings(max_examples=200, deadline=None)
@given(z=st.one_of(st.floats(-200, -1), st.floats(1, 30)), j=st.integers(1, 6))
def test_recurrence(z, j):
    lhs = z * phi_scalar(z, j) + 1 / math.factorial(j - 1)
    prev = phi_scalar(z, j - 1)
    assert abs(lhs - prev) <= 1e-12 * (1 + abs(prev))


def test_phi_dense_zero_matrix():
    out = phi_dense(np.zeros((3, 3)), 2)
    for j, P in enumerate(out):
        assert np.allclose(P, np.eye(3) / math.factorial(j), atol=1e-15)


def test_phi_dense_diagonal():
    P0, P1 = phi_dense(np.diag([-1.0, -2.0]), 1)
    assert np.allclose(P0, np.diag([math.exp(-1), math.exp(-2)]), atol=1e-15)
    assert np.allclose(P1, np.diag([1 - math.exp(-1), (1 - math.exp(-2)) / 2]), atol=1e-15)


def _eig_phi(M, j):
    lam, Q = np.linalg.eigh(M)
    return Q @ np.diag(phi_scalar_array(lam, j)) @ Q.T


def test_phi_dense_symmetric_oracle():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    M = Q @ np.diag(rng.uniform(-50, -1, 8)) @ Q.T
    M = (M + M.T) / 2
    for j, P in enumerate(phi_dense(M, 3)):
        assert np.max(np.abs(P - _eig_phi(M, j))) <= 1e-11


def test_phi_dense_refuses_large():
    with pytest.raises(DenseLimitError):
        phi_dense(np.eye(200), 1)


def test_request_validation():
    M = as_operator(np.eye(4))
    with pytest.raises(ValueError):
        PhiRequest(0.0, [(0, np.ones(4))], M)
    with pytest.raises(ValueError):
        PhiRequest(1.0, [(1, np.ones(4)), (1, np.ones(4))], M)
    with pytest.raises(ValueError):
        PhiRequest(1.0, [(-1, np.ones(4))], M)
    with pytest.raises(ValueError):
        PhiRequest(1.0, [(0, np.ones(3))], M)


def test_identity_term_on_zero_matrix():
    v = np.arange(5.0)
    res = phi_combination(PhiRequest(0.3, [(0, v)], as_operator(np.zeros((5, 5)))))
    assert np.array_equal(res.value, v)


def _dense_assembly(M, tau, terms):
    jmax = max(j for j, _ in terms)
    P = phi_dense(tau * M, jmax, dense_threshold=10 ** 6)
    return sum(tau ** j * (P[j] @ v) for j, v in terms)


@pytest.mark.parametrize("method", ["shift-invert", "polynomial"])
def test_laplacian_unit_vector(method):
    ops = assemble_operators(build_grid(49))
    v = np.zeros(49)
    v[0] = 1.0
    req = PhiRequest(0.01, [(1, v)], ops.a_h0)
    res = phi_combination(req, 1e-10, method=method)
    ref = _dense_assembly(ops.a_h0.todense(), 0.01, [(1, v)])
    assert np.max(np.abs(res.value - ref)) <= 1e-10
    assert res.estimated_error <= 1e-10


@pytest.mark.parametrize("method", ["shift-invert", "polynomial"])
def test_two_terms_random_stable(method):
    rng = np.random.default_rng(0)
    M = rng.standard_normal((30, 30)) - 8.0 * np.eye(30)
    v1, v2 = rng.standard_normal(30), rng.standard_normal(30)
    res = phi_combination(PhiRequest(0.5, [(1, v1), (2, v2)], as_operator(M)), 1e-10,
                          dense_threshold=0, method=method)
    ref = _dense_assembly(M, 0.5, [(1, v1), (2, v2)])
    assert np.max(np.abs(res.value - ref)) <= 1e-10


def _random_stable(rng, n):
    A = scipy.sparse.random(n, n, density=0.15, random_state=rng, data_rvs=rng.standard_normal)
    A = A.toarray()
    shift = np.max(np.linalg.eigvals(A).real) + rng.uniform(0.5, 5.0)
    return scipy.sparse.csr_matrix(A - shift * np.eye(n))


def test_oracle_equivalence_random_sparse():
    rng = np.random.default_rng(2024)
    bounded = 0
    for trial in range(100):
        n = int(rng.integers(4, 65))
        M = _random_stable(rng, n)
        tau = float(rng.uniform(0.05, 2.0))
        idx = sorted(rng.choice(5, size=int(rng.integers(1, 4)), replace=False))
        terms = [(int(j), rng.standard_normal(n)) for j in idx]
        method = "shift-invert" if trial % 2 == 0 else "polynomial"
        res = phi_combination(PhiRequest(tau, terms, as_operator(M)), 1e-12,
                              dense_threshold=0, method=method)
        ref = _dense_assembly(M.toarray(), tau, terms)
        err = np.max(np.abs(res.value - ref))
        assert err <= 1e-10, (trial, method, err)
        bounded += err <= max(res.estimated_error, 1e-15) or err <= 1e-13
        assert res.krylov_dimension_used <= 100
    assert bounded >= 95


def test_krylov_failure_carries_best():
    ops = assemble_operators(build_grid(200))
    v = np.random.default_rng(1).standard_normal(200)
    with pytest.raises(KrylovConvergenceError) as info:
        phi_combination(PhiRequest(1.0, [(1, v)], ops.a_h0), 1e-14, max_dim=3, method="shift-invert")
    assert info.value.best.value.shape == (200,)


def test_engine_weights_and_zero_tau():
    rng = np.random.default_rng(5)
    M = rng.standard_normal((10, 10)) - 5 * np.eye(10)
    w = {0: rng.standard_normal(10), 2: rng.standard_normal(10)}
    eng = PhiEngine()
    out = eng.combine(0.4, w, as_operator(M))
    P = phi_dense(0.4 * M, 2)
    assert np.allclose(out, P[0] @ w[0] + P[2] @ w[2], atol=1e-12)
    assert np.allclose(eng.combine(0.0, w, as_operator(M)), w[0] + w[2] / 2)


def test_sparse_operator_shift_invert():
    ops = assemble_operators(build_grid(150))
    S = scipy.sparse.csr_matrix(ops.a_h0.todense())
    v = np.sin(np.linspace(0, 3, 150))
    a = phi_combination(PhiRequest(0.002, [(0, v), (1, v)], as_operator(S)), 1e-11)
    b = phi_combination(PhiRequest(0.002, [(0, v), (1, v)], ops.a_h0), 1e-11)
    assert np.max(np.abs(a.value - b.value)) <= 1e-10
