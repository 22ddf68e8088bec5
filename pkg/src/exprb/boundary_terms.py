"""Boundary traces required by the boundary-corrected Rosenbrock steps.

Every trace ``d Jbar^m X`` that the corrected formulas need is rewritten with
the identities (valid along the exact solution of ``u_t = u_xx + psi(u) + h``)

    Jbar u    = u_t   - q,            q = psi(u) + h - psi'(u) u
    Jbar u_t  = u_tt  - h_t
    Jbar u_tt = u_ttt - w - h_tt,     w = psi''(u) u_t**2

into a small set of *atoms* ``(kind, m)``.  Atoms with ``m = 0`` are pure
data (``g`` and its time derivatives, ``h`` on the boundary).  Atoms with
``m >= 1`` are evaluated from spatial Taylor jets at the endpoint; those whose
jet reaches into ``u_x`` or ``u_tx`` need a space-derivative provider.

Ledger coefficients are polynomials in the step size ``k`` and the step start
``t_n`` with exact rational coefficients, so cancellations between the terms
of a formula are detected exactly before anything is evaluated.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .problem import CapabilityError, SemilinearIBVP

SIDES = ("left", "right")


class BoundaryPair(NamedTuple):
    left: float
    right: float

    def __add__(self, other):
        return BoundaryPair(self.left + other.left, self.right + other.right)

    def scale(self, c: float) -> "BoundaryPair":
        return BoundaryPair(c * self.left, c * self.right)


ZERO_PAIR = BoundaryPair(0.0, 0.0)


class WarmupError(RuntimeError):
    """A backward difference was requested before two samples existed."""


class CFLWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# spatial Taylor jets: arrays of f^(i)(x_b) / i!


def jet_from_derivatives(derivs: Iterable[float]) -> np.ndarray:
    return np.array([d / math.factorial(i) for i, d in enumerate(derivs)], dtype=float)


def jet_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = min(a.size, b.size)
    return np.convolve(a[:n], b[:n])[:n]


def jet_compose(fderivs: list[float], a: np.ndarray) -> np.ndarray:
    """Jet of ``F(u(x))`` given ``F^(r)(u(x_b))`` for r = 0..len-1."""
    n = a.size
    if len(fderivs) < n:
        raise CapabilityError(f"psi^({len(fderivs)})", "jet order too high")
    delta = a.copy()
    delta[0] = 0.0
    out = np.zeros(n)
    out[0] = fderivs[0]
    power = np.zeros(n)
    power[0] = 1.0
    for r in range(1, n):
        power = jet_mul(power, delta)
        out += fderivs[r] / math.factorial(r) * power
    return out


def jet_dxx(a: np.ndarray) -> np.ndarray:
    i = np.arange(a.size - 2)
    return (i + 2) * (i + 1) * a[2:]


# ---------------------------------------------------------------------------
# space-derivative providers


class DataOnly:
    """Refuses every space derivative of the solution."""

    uses_numeric = False

    def ux(self, t: float, side: str) -> float:
        raise CapabilityError("u_x", "boundary trace needs a space-derivative provider")

    def utx(self, t: float, side: str) -> float:
        raise CapabilityError("u_tx", "boundary trace needs a space-derivative provider")


class ExactDerivatives:
    """Reads ``u_x`` and ``u_tx`` from the exact solution."""

    uses_numeric = False

    def __init__(self, problem: SemilinearIBVP):
        self.problem = problem

    def ux(self, t, side):
        return float(self.problem.u_exact(1, 0)(self.problem.endpoint(side), t))

    def utx(self, t, side):
        return float(self.problem.u_exact(1, 1)(self.problem.endpoint(side), t))


def numeric_space_trace(U: np.ndarray, boundary_value: float, grid, side: str) -> float:
    """Second-order one-sided estimate of ``u_x`` at an endpoint.

    ``grid`` is a :class:`Grid1D` or the mesh width itself.
    """
    h = float(getattr(grid, "h", grid))
    if len(U) < 2:
        raise ValueError("need two interior values")
    if side == "left":
        return (-3.0 * boundary_value + 4.0 * U[0] - U[1]) / (2.0 * h)
    return (3.0 * boundary_value - 4.0 * U[-1] + U[-2]) / (2.0 * h)


def numeric_time_trace(history, k: float) -> float:
    """Backward difference of the last two samples ``(older, newer)``."""
    if len(history) < 2:
        raise WarmupError("backward difference needs two samples")
    return (history[-1] - history[-2]) / k


class NumericDerivatives:
    """``u_x`` from the numerical solution, ``u_tx`` by backward differences.

    Call :meth:`update` with the current state before the traces of a step
    are evaluated.  ``warmup`` supplies ``u_tx`` while fewer than two samples
    are available.
    """

    uses_numeric = True

    def __init__(self, problem: SemilinearIBVP, h: float, warmup=None):
        self.problem = problem
        self.h = h
        self.warmup = warmup
        self.t = None
        self.U = None
        self.k = None
        self.history = {side: [] for side in SIDES}
        self.calls = 0

    def reset(self):
        for hist in self.history.values():
            hist.clear()

    def update(self, U: np.ndarray, t: float, k: float):
        self.U = U
        self.t = t
        self.k = k
        for side in SIDES:
            hist = self.history[side]
            hist.append(self._ux_now(side))
            del hist[:-2]

    def _ux_now(self, side):
        g = self.problem.g(side)(self.t)
        return numeric_space_trace(self.U, g, self.h, side)

    def ux(self, t, side):
        self.calls += 1
        if self.U is None or t != self.t:
            raise WarmupError("numeric provider not updated for this time")
        return self._ux_now(side)

    def utx(self, t, side):
        self.calls += 1
        try:
            return numeric_time_trace(self.history[side], self.k)
        except WarmupError:
            if self.warmup is None:
                raise
            return self.warmup.utx(t, side)


# ---------------------------------------------------------------------------
# atoms


def needs_space_derivative(kind: str, m: int) -> bool:
    if m == 0:
        return False
    if kind in ("q", "w"):
        return True
    return m >= 2  # h_t, h_tt: Jbar^2 differentiates psi'(u) twice


def reduce_term(kind: str, m: int) -> dict[tuple[str, int], int]:
    """Rewrite ``Jbar^m kind`` as an integer combination of atoms."""
    out: dict[tuple[str, int], int] = defaultdict(int)

    def add(kind, m, sign):
        if m == 0 or kind in ("q", "w", "h_t", "h_tt"):
            out[(kind, m)] += sign
        elif kind == "u":
            add("u_t", m - 1, sign)
            add("q", m - 1, -sign)
        elif kind == "u_t":
            add("u_tt", m - 1, sign)
            add("h_t", m - 1, -sign)
        elif kind == "u_tt":
            add("u_ttt", m - 1, sign)
            add("w", m - 1, -sign)
            add("h_tt", m - 1, -sign)
        else:
            raise CapabilityError(f"Jbar^{m} {kind}", "not reducible for p <= 3")

    add(kind, m, 1)
    return {key: v for key, v in out.items() if v}


class BoundaryTraces:
    """Evaluates atoms ``d Jbar^m kind`` for one problem and provider."""

    def __init__(self, problem: SemilinearIBVP, provider=None):
        self.problem = problem
        self.provider = provider if provider is not None else DataOnly()
        self._cache: dict = {}

    def clear(self):
        self._cache.clear()

    def atom(self, kind: str, m: int, t: float) -> BoundaryPair:
        key = (kind, m, t)
        if key not in self._cache:
            self._cache[key] = BoundaryPair(*(self._atom_side(kind, m, t, s) for s in SIDES))
        return self._cache[key]

    # --- pointwise data -----------------------------------------------------

    def _psi(self, r, u):
        return float(self.problem.psi_derivative(r)(u))

    def _hval(self, nx, nt, t, side):
        return float(self.problem.h(nx, nt)(self.problem.endpoint(side), t))

    def _atom_side(self, kind, m, t, side):
        p = self.problem
        g = lambda r: p.g(side, r)(t)
        if m == 0:
            if kind == "u":
                return g(0)
            if kind == "u_t":
                return g(1)
            if kind == "u_tt":
                return g(2)
            if kind == "u_ttt":
                return g(3)
            if kind == "h_t":
                return self._hval(0, 1, t, side)
            if kind == "h_tt":
                return self._hval(0, 2, t, side)
            u = g(0)
            if kind == "q":
                return self._psi(0, u) + self._hval(0, 0, t, side) - self._psi(1, u) * u
            if kind == "w":
                return self._psi(2, u) * g(1) ** 2
            raise ValueError(kind)
        n = 2 * m
        if kind in ("h_t", "h_tt"):
            nt = 1 if kind == "h_t" else 2
            f = jet_from_derivatives(self._hval(i, nt, t, side) for i in range(n + 1))
        elif kind == "q":
            u = self._u_jet(n, t, side)
            psi0 = jet_compose(self._psi_list(0, n, u[0]), u)
            psi1 = jet_compose(self._psi_list(1, n, u[0]), u)
            hj = jet_from_derivatives(self._hval(i, 0, t, side) for i in range(n + 1))
            f = psi0 + hj - jet_mul(psi1, u)
        elif kind == "w":
            u = self._u_jet(n, t, side)
            ut = self._ut_jet(n, t, side)
            f = jet_mul(jet_compose(self._psi_list(2, n, u[0]), u), jet_mul(ut, ut))
        else:
            raise CapabilityError(f"Jbar^{m} {kind}", "reduce the term to atoms first")
        for j in range(m):
            order = n - 2 * j - 2
            u = self._u_jet(order, t, side)
            lin = jet_compose(self._psi_list(1, order, u[0]), u)
            f = jet_dxx(f) + jet_mul(lin, f[:order + 1])
        return float(f[0])

    def _psi_list(self, first, order, u0):
        return [self._psi(first + r, u0) for r in range(order + 1)]

    def _u_jet(self, order, t, side):
        """Spatial jet of u at the endpoint, using the PDE to trade x for t."""
        p = self.problem
        g = lambda r: p.g(side, r)(t)
        hv = lambda nx, nt: self._hval(nx, nt, t, side)
        u0 = g(0)
        d = [u0]
        if order >= 1:
            ux = self.provider.ux(t, side)
            d.append(ux)
        if order >= 2:
            d.append(g(1) - self._psi(0, u0) - hv(0, 0))
        if order >= 3:
            d.append(self.provider.utx(t, side) - self._psi(1, u0) * ux - hv(1, 0))
        if order >= 4:
            uxx = d[2]
            d.append(g(2) - self._psi(1, u0) * g(1) - hv(0, 1) - self._psi(2, u0) * ux ** 2
                     - self._psi(1, u0) * uxx - hv(2, 0))
        if order >= 5:
            raise CapabilityError("u_xxxxx", "spatial jet limited to order 4")
        return jet_from_derivatives(d)

    def _ut_jet(self, order, t, side):
        p = self.problem
        g = lambda r: p.g(side, r)(t)
        d = [g(1)]
        if order >= 1:
            d.append(self.provider.utx(t, side))
        if order >= 2:
            d.append(g(2) - self._psi(1, g(0)) * g(1) - self._hval(0, 1, t, side))
        if order >= 3:
            raise CapabilityError("u_txxx", "time-derivative jet limited to order 2")
        return jet_from_derivatives(d)

    # --- composite quantities -----------------------------------------------

    def combination(self, atoms: dict[tuple[str, int], float], t: float) -> BoundaryPair:
        total = ZERO_PAIR
        for (kind, m), c in atoms.items():
            if c:
                total = total + self.atom(kind, m, t).scale(c)
        return total

    def reduced(self, kind: str, m: int, t: float) -> BoundaryPair:
        return self.combination(reduce_term(kind, m), t)


# ---------------------------------------------------------------------------
# the named traces


def _traces(problem, ux_provider):
    return BoundaryTraces(problem, ux_provider)


def g_hat_atoms(t_n: float, level: int = 1, c: float = 0.0, k: float = 0.0, m: int = 0) -> dict:
    """Atoms of ``Jbar^m Ghat`` (levels 1, 2) or ``Ghathathat`` (level 3, m = 0)."""
    atoms = {("q", m): 1.0, ("h_t", m): -t_n}
    if level == 3:
        if m:
            raise ValueError("third-level simplification only enters without Jbar")
        corr = 0.5 * (c * k) ** 2
        atoms[("w", 0)] = corr
        atoms[("h_tt", 0)] = corr
    return atoms


def trace_u(problem, t) -> BoundaryPair:
    return BoundaryPair(problem.g("left")(t), problem.g("right")(t))


def trace_Jbar_u(problem, t) -> BoundaryPair:
    return _traces(problem, None).reduced("u", 1, t)


def trace_G_hat(problem, t_n) -> BoundaryPair:
    return _traces(problem, None).combination(g_hat_atoms(t_n), t_n)


def trace_G_hathathat(problem, t_n, c_i, k) -> BoundaryPair:
    return _traces(problem, None).combination(g_hat_atoms(t_n, 3, c_i, k), t_n)


def trace_Jbar2_u(problem, t, ux_provider=None) -> BoundaryPair:
    return _traces(problem, ux_provider).reduced("u", 2, t)


def trace_Jbar_G_hat(problem, t_n, ux_provider=None) -> BoundaryPair:
    return _traces(problem, ux_provider).combination(g_hat_atoms(t_n, m=1), t_n)


def trace_Jbar3_u(problem, t, ux_provider=None) -> BoundaryPair:
    return _traces(problem, ux_provider).reduced("u", 3, t)


def trace_Jbar_G_hathat(problem, t_n, ux_provider=None) -> BoundaryPair:
    # the second-level simplification coincides with the first one
    return trace_Jbar_G_hat(problem, t_n, ux_provider)


def trace_Jbar2_G_hat(problem, t_n, ux_provider=None) -> BoundaryPair:
    return _traces(problem, ux_provider).combination(g_hat_atoms(t_n, m=2), t_n)


# ---------------------------------------------------------------------------
# exact coefficient polynomials in (k, t_n)


class Poly:
    """Sparse polynomial ``sum c[a, b] k**a t**b`` with rational coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {key: Fraction(v) for key, v in (terms or {}).items() if v}

    @classmethod
    def mono(cls, coef, kpow=0, tpow=0):
        return cls({(kpow, tpow): coef})

    def __add__(self, other):
        out = dict(self.terms)
        for key, v in other.terms.items():
            out[key] = out.get(key, 0) + v
        return Poly(out)

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly({key: v * Fraction(other) for key, v in self.terms.items()})
        out: dict = {}
        for (a1, b1), v1 in self.terms.items():
            for (a2, b2), v2 in other.terms.items():
                key = (a1 + a2, b1 + b2)
                out[key] = out.get(key, 0) + v1 * v2
        return Poly(out)

    __rmul__ = __mul__

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if not isinstance(other, Poly):
            other = Poly.mono(other)
        return self.terms == other.terms

    __hash__ = None

    def __call__(self, k: float, t: float) -> float:
        return float(sum(float(v) * k ** a * t ** b for (a, b), v in self.terms.items()))

    def __repr__(self):
        if not self.terms:
            return "0"
        return " + ".join(f"{v}*k^{a}*t^{b}" for (a, b), v in sorted(self.terms.items()))


K = Poly.mono(1, 1, 0)
T = Poly.mono(1, 0, 1)
ONE = Poly.mono(1)


# ---------------------------------------------------------------------------
# ledger


@dataclass
class LedgerEntry:
    phi_index: int
    kind: tuple  # ("u", m) | ("h_t", m) | ("G", level, stage, m)
    coef: Poly
    stage: Optional[int] = None
    channel: str = "C"


@dataclass
class BoundaryLedger:
    """Boundary contributions of one stage (or of the step) of a corrected scheme.

    ``aggregated[j]`` maps atoms ``(kind, m)`` to the total coefficient
    multiplying ``phi_j`` in the formula; zero totals are dropped, so their
    traces are never evaluated.
    """

    entries: list[LedgerEntry] = field(default_factory=list)
    abscissae: tuple = ()

    def add(self, phi_index, kind, coef, stage=None, channel="C"):
        if coef:
            self.entries.append(LedgerEntry(phi_index, kind, coef, stage, channel))

    def max_power(self) -> int:
        return max((e.kind[-1] for e in self.entries), default=0)

    def aggregated(self, channel: str = "C") -> dict[int, dict[tuple[str, int], Poly]]:
        out: dict = defaultdict(lambda: defaultdict(Poly))
        for e in self.entries:
            if e.channel != channel:
                continue
            for atom, coef in self._expand(e).items():
                out[e.phi_index][atom] = out[e.phi_index][atom] + coef
        return {j: {a: c for a, c in atoms.items() if c} for j, atoms in out.items()
                if any(atoms.values())}

    def _expand(self, e: LedgerEntry) -> dict[tuple[str, int], Poly]:
        kind = e.kind
        if kind[0] in ("u", "h_t"):
            return {atom: e.coef * n for atom, n in reduce_term(kind[0], kind[1]).items()}
        _, level, stage, m = kind
        out = {("q", m): e.coef, ("h_t", m): e.coef * T * -1}
        if level == 3:
            if m:
                raise ValueError("third-level simplification only enters without Jbar")
            c = Fraction(self.abscissae[stage])
            corr = e.coef * K * K * (c * c / 2)
            out[("w", 0)] = corr
            out[("h_tt", 0)] = corr
        return out

    def atoms_needing_space_derivatives(self) -> list[tuple[int, str, int]]:
        return [(j, kind, m) for j, atoms in self.aggregated().items()
                for (kind, m) in atoms if needs_space_derivative(kind, m)]

    def compile(self) -> "CompiledLedger":
        return CompiledLedger(self.aggregated())


class CompiledLedger:
    """Aggregated ledger ready for repeated numeric evaluation."""

    def __init__(self, aggregated):
        self.aggregated = aggregated

    def evaluate(self, traces: BoundaryTraces, k: float, t_n: float) -> dict[int, BoundaryPair]:
        out = {}
        for j, atoms in self.aggregated.items():
            total = ZERO_PAIR
            for (kind, m), coef in atoms.items():
                total = total + traces.atom(kind, m, t_n).scale(coef(k, t_n))
            out[j] = total
        return out

    def atoms(self):
        return {a for atoms in self.aggregated.values() for a in atoms}


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def stage_ledger(tableau, p: int, i: int, with_d: bool = False) -> BoundaryLedger:
    """Boundary terms of stage ``i`` (0-based) of the corrected scheme of order ``p``."""
    c = _frac(tableau.c[i])
    tau = K * c
    led = BoundaryLedger(abscissae=tuple(tableau.c))

    def tp(n):  # tau**n
        out = ONE
        for _ in range(n):
            out = out * tau
        return out

    for l in range(0, p - 1):
        led.add(l + 1, ("u", l), tp(l + 1))
        if with_d:
            led.add(l + 1, ("u", l + 1), tp(l + 1) * -1, channel="D")
    led.add(p, ("u", p - 1), tp(p))
    lead = tau * T
    for ll in range(0, p - 2):
        led.add(ll + 2, ("h_t", ll), lead * tp(ll + 1))
        if with_d:
            led.add(ll + 2, ("h_t", ll + 1), lead * tp(ll + 1) * -1, channel="D")
    if p - 2 >= 0:
        led.add(p, ("h_t", p - 2), lead * tp(p - 1))
    for (si, j, l), lam in tableau.lam.items():
        if si != i or not lam:
            continue
        kl = K * _frac(lam)
        for ll in range(0, p - 2):
            led.add(l + ll + 1, ("G", p - 1 - ll, j, ll), kl * tp(ll + 1), stage=j)
            if with_d:
                led.add(l + ll + 1, ("G", max(1, p - 2 - ll), j, ll + 1), kl * tp(ll + 1) * -1,
                        stage=j, channel="D")
        if p - 2 >= 0:
            led.add(l + p - 1, ("G", 1, j, p - 2), kl * tp(p - 1), stage=j)
        klt = kl * tau
        for ll in range(0, p - 3):
            led.add(l + ll + 2, ("h_t", ll), klt * tp(ll + 1), stage=j)
            if with_d:
                led.add(l + ll + 2, ("h_t", ll + 1), klt * tp(ll + 1) * -1, stage=j, channel="D")
        if p - 3 >= 0:
            led.add(l + p - 1, ("h_t", p - 3), klt * tp(p - 2), stage=j)
    return led


def step_ledger(tableau, p: int, with_d: bool = False) -> BoundaryLedger:
    """Boundary terms of the step formula of the corrected scheme of order ``p``."""
    led = BoundaryLedger(abscissae=tuple(tableau.c))

    def kp(n):
        out = ONE
        for _ in range(n):
            out = out * K
        return out

    for l in range(0, p):
        led.add(l + 1, ("u", l), kp(l + 1))
        if with_d:
            led.add(l + 1, ("u", l + 1), kp(l + 1) * -1, channel="D")
    led.add(p + 1, ("u", p), kp(p + 1))
    lead = K * T
    for ll in range(0, p - 1):
        led.add(ll + 2, ("h_t", ll), lead * kp(ll + 1))
        if with_d:
            led.add(ll + 2, ("h_t", ll + 1), lead * kp(ll + 1) * -1, channel="D")
    led.add(p + 1, ("h_t", p - 1), lead * kp(p))
    for (i, l), mu in tableau.mu.items():
        if not mu:
            continue
        km = K * _frac(mu)
        for ll in range(0, p - 1):
            led.add(l + ll + 1, ("G", p - ll, i, ll), km * kp(ll + 1), stage=i)
            if with_d:
                led.add(l + ll + 1, ("G", max(1, p - 1 - ll), i, ll + 1), km * kp(ll + 1) * -1,
                        stage=i, channel="D")
        led.add(l + p, ("G", 1, i, p - 1), km * kp(p), stage=i)
        kmk = km * K
        for ll in range(0, p - 2):
            led.add(l + ll + 2, ("h_t", ll), kmk * kp(ll + 1), stage=i)
            if with_d:
                led.add(l + ll + 2, ("h_t", ll + 1), kmk * kp(ll + 1) * -1, stage=i, channel="D")
        if p - 2 >= 0:
            led.add(l + p, ("h_t", p - 2), kmk * kp(p - 1), stage=i)
    return led


def check_cfl(k: float, h: float, gamma: int = 1, constant: float = 1.0, provider=None):
    """Warn when numeric space differentiation is active and ``k / h**gamma > constant``."""
    if provider is not None and getattr(provider, "uses_numeric", False) and k / h ** gamma > constant:
        warnings.warn(f"k/h^{gamma} = {k / h ** gamma:.3g} exceeds {constant}", CFLWarning, stacklevel=3)
        return False
    return True
