"""Phi-functions of matrices applied to vectors.

Two evaluation routes are provided: a dense one based on the exponential of a
block-augmented matrix (used for small operators and as a test oracle), and a
Krylov one that approximates the exponential of an augmented operator

    [[tau*M, tau*W], [0, tau*S]]

with ``W = [v_p, ..., v_1]`` and ``S`` the nilpotent shift, whose action on
``[v_0; e_p]`` yields ``sum_j tau**j phi_j(tau*M) v_j`` in its first block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np
import scipy.linalg
import scipy.sparse

DENSE_THRESHOLD = 128
DEFAULT_TOL = 1e-10
TAYLOR_SWITCH = 1.0


class DenseLimitError(ValueError):
    """Operator too large for the dense route."""


class KrylovConvergenceError(RuntimeError):
    """Raised when the Krylov iteration cannot reach the requested tolerance.

    The best available approximation is kept in ``best``.
    """

    def __init__(self, message: str, best: "PhiResult"):
        super().__init__(message)
        self.best = best


class LinearOperatorLike(Protocol):
    shape: tuple[int, int]

    def matvec(self, v: np.ndarray) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# scalar phi-functions


def phi_scalar(z: complex | float, j: int) -> complex | float:
    """Return phi_j(z), with phi_0 = exp."""
    if j < 0:
        raise ValueError("phi index must be non-negative")
    if j == 0:
        return np.exp(z)
    if abs(z) < TAYLOR_SWITCH:
        # phi_j(z) = sum_m z**m / (m + j)!
        term = 1.0 / math.factorial(j)
        total = term
        for m in range(1, 40):
            term = term * z / (m + j)
            total += term
            if abs(term) <= 1e-18 * abs(total):
                break
        return total
    value = np.exp(z)
    for i in range(1, j + 1):
        value = (value - 1.0 / math.factorial(i - 1)) / z
    return value


def phi_scalar_array(z: np.ndarray, j: int) -> np.ndarray:
    """Vectorised :func:`phi_scalar` over a real or complex array."""
    z = np.asarray(z)
    out = np.exp(z)
    if j == 0:
        return out
    small = np.abs(z) < TAYLOR_SWITCH
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(1, j + 1):
            out = (out - 1.0 / math.factorial(i - 1)) / z
    if np.any(small):
        zs = z[small]
        term = np.full(zs.shape, 1.0 / math.factorial(j), dtype=out.dtype)
        total = term.copy()
        for m in range(1, 40):
            term = term * zs / (m + j)
            total = total + term
        out[small] = total
    return out


# ---------------------------------------------------------------------------
# dense route


def _as_dense(M: Any) -> np.ndarray:
    if isinstance(M, np.ndarray):
        return M
    if scipy.sparse.issparse(M):
        return M.toarray()
    if hasattr(M, "todense"):
        return np.asarray(M.todense())
    n = M.shape[0]
    eye = np.eye(n)
    return np.column_stack([M.matvec(eye[:, i]) for i in range(n)])


def phi_dense(M: Any, j_max: int, dense_threshold: int = DENSE_THRESHOLD) -> list[np.ndarray]:
    """Return ``[phi_0(M), ..., phi_{j_max}(M)]`` for a small square matrix.

    Uses the exponential of the block upper-triangular matrix with ``M`` in
    the leading block and identities on the superdiagonal; the first block
    row of that exponential holds the phi-functions.
    """
    A = _as_dense(M)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > dense_threshold:
        raise DenseLimitError(f"dimension {n} exceeds dense threshold {dense_threshold}")
    if j_max == 0:
        return [scipy.linalg.expm(A)]
    big = np.zeros(((j_max + 1) * n, (j_max + 1) * n), dtype=np.result_type(A, float))
    big[:n, :n] = A
    for b in range(j_max):
        big[b * n:(b + 1) * n, (b + 1) * n:(b + 2) * n] = np.eye(n)
    E = scipy.linalg.expm(big)
    return [E[:n, b * n:(b + 1) * n] for b in range(j_max + 1)]


# ---------------------------------------------------------------------------
# requests and results


@dataclass
class PhiRequest:
    """Ask for ``sum_j tau**j * phi_j(tau*operator) @ v_j``."""

    tau: float
    terms: list[tuple[int, np.ndarray]]
    operator: Any

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        indices = [j for j, _ in self.terms]
        if len(set(indices)) != len(indices):
            raise ValueError("phi indices must be distinct within a request")
        if any(j < 0 for j in indices):
            raise ValueError("phi indices must be non-negative")
        n = self.operator.shape[0]
        for _, v in self.terms:
            if np.shape(v) != (n,):
                raise ValueError(f"term vector has shape {np.shape(v)}, expected ({n},)")

    @property
    def size(self) -> int:
        return self.operator.shape[0]


@dataclass
class PhiResult:
    value: np.ndarray
    estimated_error: float
    krylov_dimension_used: int = 0
    substeps: int = 0


def _dense_combination(req: PhiRequest, dense_threshold: int) -> PhiResult:
    A = _as_dense(req.operator)
    j_max = max(j for j, _ in req.terms)
    phis = phi_dense(req.tau * A, j_max, dense_threshold)
    value = np.zeros(req.size)
    for j, v in req.terms:
        value += req.tau ** j * (phis[j] @ v)
    return PhiResult(value, 0.0, 0)


# ---------------------------------------------------------------------------
# augmented operator


class _Augmented:
    """Action of the augmented matrix ``[[M, W], [0, S]]`` (unscaled by tau)."""

    def __init__(self, operator, vectors: dict[int, np.ndarray], n: int):
        self.operator = operator
        self.n = n
        self.p = max(vectors) if vectors else 0
        p = self.p
        W = np.zeros((n, p))
        for j, v in vectors.items():
            if j >= 1:
                W[:, p - j] = v
        # balance the polynomial block against the operator block
        wnorm = np.abs(W).max() if p else 0.0
        self.eta = 2.0 ** (-math.ceil(math.log2(wnorm))) if wnorm > 0 else 1.0
        self.W = W * self.eta
        self.start = np.zeros(n + p)
        if 0 in vectors:
            self.start[:n] = vectors[0]
        if p:
            self.start[-1] = 1.0 / self.eta

    def matvec(self, z: np.ndarray) -> np.ndarray:
        n, p = self.n, self.p
        y = np.empty_like(z)
        y[:n] = self.operator.matvec(z[:n])
        if p:
            y[:n] += self.W @ z[n:]
            y[n:-1] = z[n + 1:]
            y[-1] = 0.0
        return y

    def shifted_solve(self, sigma: float, z: np.ndarray) -> np.ndarray:
        """Solve ``(I - sigma*Aug) y = z``."""
        n, p = self.n, self.p
        y = np.empty_like(z)
        if p:
            # (I - sigma*S) b = z[n:], back substitution on the shift
            b = np.empty(p)
            b[-1] = z[-1]
            for i in range(p - 2, -1, -1):
                b[i] = z[n + i] + sigma * b[i + 1]
            y[n:] = b
            rhs = z[:n] + sigma * (self.W @ b)
        else:
            rhs = z[:n]
        y[:n] = self.operator.solve_shifted(sigma, rhs)
        return y


def _arnoldi_step(V: np.ndarray, H: np.ndarray, j: int, w: np.ndarray) -> float:
    # two passes of classical Gram-Schmidt
    basis = V[:j + 1]
    hcol = basis @ w
    w -= hcol @ basis
    corr = basis @ w
    w -= corr @ basis
    H[:j + 1, j] = hcol + corr
    hnorm = float(np.linalg.norm(w))
    H[j + 1, j] = hnorm
    return hnorm


def _shift_invert(req: PhiRequest, vectors, tol: float, max_dim: int, gamma: float) -> PhiResult:
    n = req.size
    aug = _Augmented(req.operator, vectors, n)
    x0 = aug.start
    beta = float(np.linalg.norm(x0))
    if beta == 0.0:
        return PhiResult(np.zeros(n), 0.0, 0)
    sigma = gamma * req.tau
    V = np.zeros((max_dim + 1, x0.size))
    H = np.zeros((max_dim + 1, max_dim))
    V[0] = x0 / beta
    previous = None
    estimate = np.inf
    current = None
    m = 0
    for j in range(max_dim):
        w = aug.shifted_solve(sigma, V[j])
        hnorm = _arnoldi_step(V, H, j, w)
        m = j + 1
        Hm = H[:m, :m]
        S = (np.eye(m) - np.linalg.solve(Hm, np.eye(m))) / gamma
        coeffs = beta * scipy.linalg.expm(S)[:, 0]
        current = coeffs @ V[:m, :n]
        if previous is not None:
            estimate = float(np.abs(current - previous).max())
            if estimate <= tol:
                break
        previous = current
        if hnorm <= 1e-13:
            # invariant subspace (basis vectors are unit, |Z| <= 1): exact up to round-off
            estimate = 0.0
            break
        V[j + 1] = w / hnorm
    else:
        raise KrylovConvergenceError(
            f"shift-invert Arnoldi reached dimension {max_dim} with estimate {estimate:.3e} > {tol:.3e}",
            PhiResult(current, estimate, m),
        )
    return PhiResult(current, estimate, m)


def _polynomial(req: PhiRequest, vectors, tol: float, max_dim: int,
                max_substeps: int) -> PhiResult:
    # expokit-style time stepping of exp(t*Aug) x0 over t in [0, tau]
    n = req.size
    aug = _Augmented(req.operator, vectors, n)
    x = aug.start.copy()
    tau = req.tau
    m = min(max_dim, x.size)
    t = 0.0
    step = tau
    total_err = 0.0
    substeps = 0
    V = np.zeros((m + 1, x.size))
    H = np.zeros((m + 1, m))
    while t < tau:
        if substeps >= max_substeps:
            raise KrylovConvergenceError(
                f"polynomial Arnoldi exceeded {max_substeps} substeps",
                PhiResult(x[:n], np.inf, m, substeps),
            )
        beta = float(np.linalg.norm(x))
        if beta == 0.0:
            break
        V[:] = 0.0
        H[:] = 0.0
        V[0] = x / beta
        mm = m
        happy = False
        for j in range(m):
            w = aug.matvec(V[j])
            wnorm = float(np.linalg.norm(w))
            hnorm = _arnoldi_step(V, H, j, w)
            if hnorm <= 1e-12 * wnorm:
                mm = j + 1
                happy = True
                break
            V[j + 1] = w / hnorm
        step = min(step, tau - t)
        while True:
            E = np.zeros((mm + 1, mm + 1))
            E[:mm, :mm] = step * H[:mm, :mm]
            E[0, mm] = 1.0
            E = scipy.linalg.expm(E)
            err = 0.0 if happy else beta * H[mm, mm - 1] * abs(step * E[mm - 1, mm])
            allowed = tol * step / tau
            if err <= allowed:
                break
            step *= max(0.2, 0.9 * (allowed / err) ** (1.0 / mm))
        x = beta * (E[:mm, 0] @ V[:mm])
        t += step
        total_err += err
        substeps += 1
        if happy:
            step = tau - t
        elif err > 0:
            step *= min(5.0, 0.9 * (tol * step / tau / err) ** (1.0 / mm))
        else:
            step *= 5.0
    return PhiResult(x[:n], total_err, m, substeps)


def phi_combination(
    request: PhiRequest,
    tol: float = DEFAULT_TOL,
    *,
    dense_threshold: int = DENSE_THRESHOLD,
    max_dim: int = 100,
    method: str = "auto",
    gamma: float = 0.1,
    max_substeps: int = 20000,
) -> PhiResult:
    """Evaluate ``sum_j tau**j phi_j(tau*M) v_j`` for the terms of ``request``.

    ``method`` is one of ``"auto"``, ``"dense"``, ``"shift-invert"`` or
    ``"polynomial"``.  ``"auto"`` takes the dense route for dimensions up to
    ``dense_threshold``, shift-and-invert Arnoldi when the operator offers
    ``solve_shifted(sigma, b)`` (solving ``(I - sigma*M) x = b``), and
    time-stepped polynomial Arnoldi otherwise.
    """
    n = request.size
    vectors: dict[int, np.ndarray] = {}
    for j, v in request.terms:
        vectors[j] = np.asarray(v, dtype=float)
    if not vectors:
        return PhiResult(np.zeros(n), 0.0, 0)
    if method == "auto":
        if n <= dense_threshold:
            method = "dense"
        elif hasattr(request.operator, "solve_shifted"):
            method = "shift-invert"
        else:
            method = "polynomial"
    if method == "dense":
        return _dense_combination(request, max(dense_threshold, n))
    if method == "shift-invert":
        return _shift_invert(request, vectors, tol, max_dim, gamma)
    if method == "polynomial":
        return _polynomial(request, vectors, tol, max_dim, max_substeps)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class PhiEngine:
    """Configured, stateless front end to :func:`phi_combination`."""

    tol: float = DEFAULT_TOL
    dense_threshold: int = DENSE_THRESHOLD
    max_dim: int = 100
    method: str = "auto"
    gamma: float = 0.1
    stats: dict = field(default_factory=dict, compare=False, repr=False)

    def combine(self, tau: float, weighted: dict[int, np.ndarray], operator) -> np.ndarray:
        """Return ``sum_j phi_j(tau*operator) @ w_j`` for ``weighted = {j: w_j}``.

        Unlike :class:`PhiRequest`, the weights carry no implicit ``tau**j``.
        A zero ``tau`` gives ``sum_j w_j / j!``.
        """
        if tau == 0.0:
            return sum(w / math.factorial(j) for j, w in weighted.items())
        terms = [(j, w / tau ** j) for j, w in sorted(weighted.items())]
        result = phi_combination(
            PhiRequest(tau, terms, operator),
            self.tol,
            dense_threshold=self.dense_threshold,
            max_dim=self.max_dim,
            method=self.method,
            gamma=self.gamma,
        )
        self.stats["calls"] = self.stats.get("calls", 0) + 1
        self.stats["krylov_dim"] = self.stats.get("krylov_dim", 0) + result.krylov_dimension_used
        return result.value


def as_operator(M: Any):
    """Wrap a dense or sparse matrix so it exposes ``shape`` and ``matvec``."""
    if hasattr(M, "matvec") and not isinstance(M, np.ndarray) and not scipy.sparse.issparse(M):
        return M
    return _MatrixOperator(M)


class _MatrixOperator:
    def __init__(self, M):
        self.M = M
        self.shape = M.shape

    def matvec(self, v):
        return self.M @ v

    def todense(self):
        return _as_dense(self.M)

    def solve_shifted(self, sigma, b):
        n = self.shape[0]
        if scipy.sparse.issparse(self.M):
            import scipy.sparse.linalg as spla
            return spla.spsolve((scipy.sparse.identity(n) - sigma * self.M).tocsc(), b)
        return np.linalg.solve(np.eye(n) - sigma * self.M, b)
