"""Second-order finite differences on a uniform interior grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class Grid1D:
    N: int
    x_left: float
    x_right: float

    def __post_init__(self):
        if self.N < 3:
            raise ValueError(f"need at least 3 interior nodes, got {self.N}")
        if not self.x_right > self.x_left:
            raise ValueError("empty interval")

    @property
    def h(self) -> float:
        return (self.x_right - self.x_left) / (self.N + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_left + self.h * np.arange(1, self.N + 1)


def build_grid(N: int, domain: tuple[float, float] = (0.0, 1.0)) -> Grid1D:
    return Grid1D(int(N), float(domain[0]), float(domain[1]))


class Tridiagonal:
    """Symmetric tridiagonal matrix stored by diagonals, applied matrix-free."""

    def __init__(self, diag: np.ndarray, off: np.ndarray):
        self.diag = np.asarray(diag, dtype=float)
        self.off = np.asarray(off, dtype=float)
        n = self.diag.size
        self.shape = (n, n)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        y = self.diag * v
        y[:-1] += self.off * v[1:]
        y[1:] += self.off * v[:-1]
        return y

    __matmul__ = matvec

    def todense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def solve_shifted(self, sigma: float, b: np.ndarray) -> np.ndarray:
        """Solve ``(I - sigma*T) x = b`` in O(N)."""
        n = self.shape[0]
        ab = np.empty((3, n))
        ab[0, 0] = 0.0
        ab[0, 1:] = -sigma * self.off
        ab[1] = 1.0 - sigma * self.diag
        ab[2, :-1] = -sigma * self.off
        ab[2, -1] = 0.0
        return scipy.linalg.solve_banded((1, 1), ab, b, overwrite_ab=True, check_finite=False)

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigh_tridiagonal(self.diag, self.off, eigvals_only=True)


@dataclass(frozen=True)
class DiscreteOperators:
    """``A_{h,0}``, the boundary injection ``C_h`` and the (zero) ``D_h``."""

    grid: Grid1D
    a_h0: Tridiagonal

    def c_h(self, left: float, right: float) -> np.ndarray:
        v = np.zeros(self.grid.N)
        inv_h2 = 1.0 / self.grid.h ** 2
        v[0] += left * inv_h2
        v[-1] += right * inv_h2
        return v

    # this discretization has no D_h contribution; stepping formulas skip the
    # D_h terms when d_h is None
    d_h = None


def assemble_operators(g: Grid1D) -> DiscreteOperators:
    inv_h2 = 1.0 / g.h ** 2
    a = Tridiagonal(np.full(g.N, -2.0 * inv_h2), np.full(g.N - 1, inv_h2))
    return DiscreteOperators(g, a)


def project(f: Callable[[np.ndarray], np.ndarray], g: Grid1D) -> np.ndarray:
    """Nodal values of ``f`` on the interior grid."""
    return np.asarray(f(g.nodes), dtype=float) * np.ones(g.N)


class DiscreteJacobian(Tridiagonal):
    """``A_{h,0} + diag(shift)`` as a lazy operator."""

    def __init__(self, base: Tridiagonal, diag_shift: np.ndarray):
        self.base = base
        self.diag_shift = np.asarray(diag_shift, dtype=float)
        super().__init__(base.diag + self.diag_shift, base.off)


def jacobian(ops: DiscreteOperators, psi_prime_of_U: np.ndarray) -> DiscreteJacobian:
    shift = np.asarray(psi_prime_of_U, dtype=float)
    if shift.shape != (ops.grid.N,):
        raise ValueError(f"shift has shape {shift.shape}, expected ({ops.grid.N},)")
    return DiscreteJacobian(ops.a_h0, shift)


def max_eigenvalue(op: Tridiagonal) -> float:
    return float(scipy.linalg.eigh_tridiagonal(
        op.diag, op.off, eigvals_only=True, select="i", select_range=(op.shape[0] - 1, op.shape[0] - 1))[0])
