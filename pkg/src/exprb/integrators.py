"""Exponential Rosenbrock time stepping: method of lines and boundary-corrected schemes."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np

from . import boundary_terms as bt
from .discretization import (DiscreteJacobian, DiscreteOperators, Grid1D, assemble_operators,
                             jacobian, project)
from .phi import PhiEngine
from .problem import CapabilityError, SemilinearIBVP

MAX_P = 3


@dataclass(frozen=True)
class Tableau:
    """``a_ij(z) = sum_l lam[i, j, l] phi_l(c_i z)``, ``b_i(z) = sum_l mu[i, l] phi_l(z)``.

    Stage indices are 0-based.
    """

    name: str
    s: int
    c: tuple
    lam: dict
    mu: dict
    r: int
    classical_order: int

    def __post_init__(self):
        if len(self.c) != self.s:
            raise ValueError("need one abscissa per stage")
        for (i, j, l) in self.lam:
            if not 0 <= j < i < self.s:
                raise ValueError(f"stage coupling ({i}, {j}) is not strictly lower triangular")
            if not 1 <= l <= self.r:
                raise ValueError(f"phi index {l} outside 1..{self.r}")
        for (i, l) in self.mu:
            if not (0 <= i < self.s and 1 <= l <= self.r):
                raise ValueError(f"bad weight index ({i}, {l})")

    def consistency_residuals(self) -> tuple[list[Fraction], Fraction]:
        """Exact residuals of ``sum_j a_ij(0) = c_i`` and ``sum_i b_i(0) = 1``."""
        stage = []
        for i in range(self.s):
            total = sum((Fraction(v) / math.factorial(l) for (si, j, l), v in self.lam.items() if si == i),
                        Fraction(0))
            stage.append(total - Fraction(self.c[i]) if i else Fraction(self.c[i]))
        weight = sum((Fraction(v) / math.factorial(l) for (i, l), v in self.mu.items()), Fraction(0))
        return stage, weight - 1

    def is_consistent(self) -> bool:
        stage, weight = self.consistency_residuals()
        return weight == 0 and all(r == 0 for r in stage)


def builtin_rosenbrock_euler() -> Tableau:
    return Tableau("rosenbrock-euler", 1, (Fraction(0),), {}, {(0, 1): Fraction(1)}, 1, 2)


def builtin_third_order() -> Tableau:
    third = Fraction(1, 3)
    half = Fraction(1, 2)
    return Tableau(
        "third-order", 2, (Fraction(0), Fraction(1)),
        {(1, 0, 1): Fraction(1)},
        {(0, 1): half, (0, 2): third, (1, 1): half, (1, 2): -third},
        2, 3,
    )


TABLEAUX = {"rosenbrock-euler": builtin_rosenbrock_euler, "third-order": builtin_third_order}


def get_tableau(name: str) -> Tableau:
    try:
        return TABLEAUX[name]()
    except KeyError:
        raise KeyError(f"unknown method {name!r}; valid: {sorted(TABLEAUX)}") from None


@dataclass
class StepState:
    t: float
    U: np.ndarray
    jacobian: Optional[DiscreteJacobian] = None
    samples: dict = field(default_factory=dict)


@dataclass
class Context:
    """Everything a step needs besides the state."""

    problem: SemilinearIBVP
    ops: DiscreteOperators
    tableau: Tableau
    engine: PhiEngine = field(default_factory=PhiEngine)
    provider: object = None
    cfl_constant: float = math.inf
    cfl_gamma: int = 1

    def __post_init__(self):
        self.x = self.ops.grid.nodes
        self.traces = bt.BoundaryTraces(self.problem, self.provider)

    def psi(self, r, U):
        return np.asarray(self.problem.psi_derivative(r)(U), dtype=float) * np.ones_like(U)

    def source(self, nt, t):
        return np.asarray(self.problem.h(0, nt)(self.x, t), dtype=float) * np.ones_like(self.x)

    def c_data(self, order, t):
        p = self.problem
        return self.ops.c_h(p.g("left", order)(t), p.g("right", order)(t))

    def c_pair(self, pair):
        return self.ops.c_h(pair.left, pair.right)


def make_context(problem: SemilinearIBVP, grid: Grid1D, tableau: Tableau, *,
                 engine: Optional[PhiEngine] = None, provider=None, **kw) -> Context:
    return Context(problem, assemble_operators(grid), tableau, engine or PhiEngine(), provider, **kw)


def _prepare(state: StepState, ctx: Context) -> DiscreteJacobian:
    J = jacobian(ctx.ops, ctx.psi(1, state.U))
    state.jacobian = J
    return J


def _add(weighted: dict, j: int, v: np.ndarray):
    if j in weighted:
        weighted[j] = weighted[j] + v
    else:
        weighted[j] = v


def mol_step(state: StepState, k: float, ctx: Context) -> StepState:
    """One step of the method applied to the semidiscrete system."""
    if not k > 0:
        raise ValueError("step size must be positive")
    tab = ctx.tableau
    t, U = state.t, state.U
    J = _prepare(state, ctx)
    dpsi = ctx.psi(1, U)
    V = ctx.c_data(1, t) + ctx.source(1, t)

    def G(tj, Uj):
        return ctx.c_data(0, tj) + ctx.psi(0, Uj) + ctx.source(0, tj) - dpsi * Uj - tj * V

    stages, Gs = [], []
    for i in range(tab.s):
        ci = float(tab.c[i])
        tau = ci * k
        w = {0: U}
        if tau:
            _add(w, 1, tau * t * V)
        for (si, j, l), lam in tab.lam.items():
            if si != i:
                continue
            _add(w, l, k * float(lam) * Gs[j])
            _add(w, l + 1, k * float(lam) * tau * V)
        Ui = ctx.engine.combine(tau, w, J)
        stages.append(Ui)
        Gs.append(G(t + tau, Ui))

    w = {0: U, 1: k * t * V}
    for (i, l), mu in tab.mu.items():
        _add(w, l, k * float(mu) * Gs[i])
        _add(w, l + 1, k * float(mu) * k * V)
    return StepState(t + k, ctx.engine.combine(k, w, J))


@lru_cache(maxsize=None)
def _compiled(tableau_name: str, p: int):
    tab = get_tableau(tableau_name)
    stages = [bt.stage_ledger(tab, p, i).compile() for i in range(tab.s)]
    return stages, bt.step_ledger(tab, p).compile()


def compiled_ledgers(tableau: Tableau, p: int):
    """Aggregated boundary ledgers ``(stage_ledgers, step_ledger)``."""
    if tableau.name in TABLEAUX and TABLEAUX[tableau.name]() == tableau:
        return _compiled(tableau.name, p)
    stages = [bt.stage_ledger(tableau, p, i).compile() for i in range(tableau.s)]
    return stages, bt.step_ledger(tableau, p).compile()


def check_p(p: int):
    if p not in (1, 2, 3):
        raise ValueError(f"p must be 1, 2 or 3, got {p}")


def corrected_step(state: StepState, k: float, ctx: Context, p: int) -> StepState:
    """One step of the boundary-corrected scheme of order ``p``."""
    check_p(p)
    if not k > 0:
        raise ValueError("step size must be positive")
    if not ctx.problem.has_source(0, 1):
        raise CapabilityError("h_t", "corrected schemes need the time derivative of h")
    tab = ctx.tableau
    t, U = state.t, state.U
    J = _prepare(state, ctx)
    dpsi = ctx.psi(1, U)
    Ph = ctx.source(1, t)
    stage_led, step_led = compiled_ledgers(tab, p)
    bt.check_cfl(k, ctx.ops.grid.h, ctx.cfl_gamma, ctx.cfl_constant, ctx.provider)
    if hasattr(ctx.provider, "update"):
        ctx.provider.update(U, t, k)
    ctx.traces.clear()

    Gs = []
    for i in range(tab.s):
        tau = float(tab.c[i]) * k
        w = {0: U}
        if tau:
            _add(w, 1, tau * t * Ph)
        for (si, j, l), lam in tab.lam.items():
            if si != i:
                continue
            _add(w, l, k * float(lam) * Gs[j])
            _add(w, l + 1, k * float(lam) * tau * Ph)
        for j, pair in stage_led[i].evaluate(ctx.traces, k, t).items():
            _add(w, j, ctx.c_pair(pair))
        Ki = ctx.engine.combine(tau, w, J)
        tj = t + tau
        Gs.append(ctx.psi(0, Ki) + ctx.source(0, tj) - tj * Ph - dpsi * Ki)

    w = {0: U, 1: k * t * Ph}
    for (i, l), mu in tab.mu.items():
        _add(w, l, k * float(mu) * Gs[i])
        _add(w, l + 1, k * float(mu) * k * Ph)
    for j, pair in step_led.evaluate(ctx.traces, k, t).items():
        _add(w, j, ctx.c_pair(pair))
    return StepState(t + k, ctx.engine.combine(k, w, J))


@dataclass(frozen=True)
class Scheme:
    kind: str  # "mol" | "corrected"
    p: int = 0

    def __post_init__(self):
        if self.kind not in ("mol", "corrected"):
            raise ValueError(f"unknown scheme {self.kind!r}; valid: ['corrected', 'mol']")
        if self.kind == "corrected":
            check_p(self.p)

    def step(self, state, k, ctx):
        if self.kind == "mol":
            return mol_step(state, k, ctx)
        return corrected_step(state, k, ctx, self.p)

    def __str__(self):
        return "mol" if self.kind == "mol" else f"corrected-p{self.p}"


MOL = Scheme("mol")


def corrected(p: int) -> Scheme:
    return Scheme("corrected", p)


def step_count(k, T) -> int:
    """Number of steps ``T / k``; raises unless it is an integer within 1e-12."""
    k = Fraction(k) if isinstance(k, (Fraction, int, str)) else k
    T = Fraction(T) if isinstance(T, (Fraction, int, str)) else T
    ratio = T / k
    if isinstance(ratio, Fraction):
        if ratio.denominator != 1 or ratio <= 0:
            raise ValueError(f"T/k = {ratio} is not a positive integer")
        return int(ratio)
    n = round(float(ratio))
    if n < 1 or abs(float(ratio) - n) > 1e-12 * max(1, n):
        raise ValueError(f"T/k = {float(ratio)!r} is not a positive integer")
    return n


@dataclass
class Trajectory:
    state: StepState
    steps: int
    step_seconds: list
    final_error: Optional[float]
    max_error: Optional[float]

    @property
    def seconds(self) -> float:
        return float(sum(self.step_seconds))


def _exact_nodes(ctx, t):
    return np.asarray(ctx.problem.u_exact(0, 0)(ctx.x, t), dtype=float)


def integrate(ctx: Context, scheme: Scheme, k, T=1) -> Trajectory:
    """Integrate from ``U^0 = P_h u_0`` to ``T`` with constant step ``k``.

    Timings cover the step calls only; errors are measured between steps.
    """
    n = step_count(k, T)
    kf = float(k)
    state = StepState(0.0, project(ctx.problem.initial, ctx.ops.grid))
    has_exact = ctx.problem.exact is not None
    max_err = 0.0 if has_exact else None
    times = []
    for i in range(n):
        t0 = time.perf_counter()
        new = scheme.step(state, kf, ctx)
        times.append(time.perf_counter() - t0)
        state = StepState((i + 1) * kf, new.U)
        if has_exact:
            max_err = max(max_err, float(np.max(np.abs(state.U - _exact_nodes(ctx, state.t)))))
    final = float(np.max(np.abs(state.U - _exact_nodes(ctx, state.t)))) if has_exact else None
    return Trajectory(state, n, times, final, max_err)


@dataclass
class LocalErrors:
    errors: np.ndarray  # one entry per step start t_n = n k

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    @property
    def first(self) -> float:
        return float(self.errors[0])


def local_error_sweep(ctx: Context, scheme: Scheme, k, T=1, starts: Optional[int] = None) -> LocalErrors:
    """One step from ``P_h u(t_n)`` for every ``t_n`` in ``[0, T)``.

    ``starts`` limits the sweep to the first few step starts.
    """
    if ctx.problem.exact is None:
        raise CapabilityError("exact", "local errors need the exact solution")
    n = step_count(k, T)
    if starts is not None:
        n = min(n, starts)
    kf = float(k)
    errs = []
    for i in range(n):
        t = i * kf
        if hasattr(ctx.provider, "reset"):
            ctx.provider.reset()
        out = scheme.step(StepState(t, _exact_nodes(ctx, t)), kf, ctx)
        errs.append(float(np.max(np.abs(out.U - _exact_nodes(ctx, t + kf)))))
    return LocalErrors(np.array(errs))
