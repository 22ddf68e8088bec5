"""Continuous semilinear reaction-diffusion problems on an interval.

The problem is ``u_t = u_xx + psi(u) + h(x, t)`` with Dirichlet data
``u(x_left, t) = g_left(t)``, ``u(x_right, t) = g_right(t)`` and initial
state ``u0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Scalar = Callable[[float], float]
Field = Callable[[np.ndarray, float], np.ndarray]


class CapabilityError(LookupError):
    """A data field needed by an operation is missing from the problem."""

    def __init__(self, field_name: str, detail: str = ""):
        self.field_name = field_name
        msg = f"problem does not provide {field_name!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ValidationError(ValueError):
    def __init__(self, field_name: str, residual: float):
        self.field_name = field_name
        self.residual = residual
        super().__init__(f"validation failed for {field_name}: residual {residual:.3e}")


@dataclass(frozen=True)
class SemilinearIBVP:
    """Problem data.

    ``psi`` lists the reaction term followed by its derivatives,
    ``[psi, psi', psi'', psi''', ...]`` (at least four entries).
    ``source`` maps ``(nx, nt)`` to the partial derivative
    ``d^nx/dx^nx d^nt/dt^nt h`` as a callable ``(x, t) -> value``; the entry
    ``(0, 0)`` is ``h`` itself.  ``boundary_left``/``boundary_right`` list
    ``g`` followed by its time derivatives.  ``exact``, when present, maps
    ``(nx, nt)`` to partial derivatives of the exact solution.
    """

    psi: Sequence[Scalar]
    source: dict
    boundary_left: Sequence[Scalar]
    boundary_right: Sequence[Scalar]
    initial: Callable[[np.ndarray], np.ndarray]
    domain: tuple[float, float] = (0.0, 1.0)
    exact: Optional[dict] = None
    name: str = "custom"

    def __post_init__(self):
        if len(self.psi) < 4:
            raise ValueError("psi needs the function and at least three derivatives")
        if (0, 0) not in self.source:
            raise ValueError("source must contain h itself under key (0, 0)")
        if self.domain[1] <= self.domain[0]:
            raise ValueError("empty domain")

    # --- reaction -----------------------------------------------------------

    def psi_derivative(self, order: int) -> Scalar:
        if order >= len(self.psi):
            raise CapabilityError(f"psi^({order})")
        return self.psi[order]

    # --- source -------------------------------------------------------------

    def h(self, nx: int = 0, nt: int = 0) -> Field:
        try:
            return self.source[(nx, nt)]
        except KeyError:
            raise CapabilityError(_partial_name("h", nx, nt)) from None

    def has_source(self, nx: int, nt: int) -> bool:
        return (nx, nt) in self.source

    # --- boundary -----------------------------------------------------------

    def g(self, side: str, order: int = 0) -> Scalar:
        data = self.boundary_left if side == "left" else self.boundary_right
        if order >= len(data):
            raise CapabilityError(f"g_{side}" + "_t" * order)
        return data[order]

    def endpoint(self, side: str) -> float:
        return self.domain[0] if side == "left" else self.domain[1]

    # --- exact solution -----------------------------------------------------

    def u_exact(self, nx: int = 0, nt: int = 0) -> Field:
        if self.exact is None:
            raise CapabilityError("exact")
        try:
            return self.exact[(nx, nt)]
        except KeyError:
            raise CapabilityError(_partial_name("u", nx, nt)) from None


def _partial_name(base: str, nx: int, nt: int) -> str:
    return base + ("_" + "x" * nx + "t" * nt if nx or nt else "")


def _cos_derivative(n: int, shift: float = 0.0):
    # n-th derivative of s -> cos(s + shift)
    phase = shift + n * math.pi / 2
    return lambda s: np.cos(s + phase)


def _travelling(f1d):
    return lambda x, t: f1d(np.asarray(x) + t)


def manufactured_problem() -> SemilinearIBVP:
    """``u_t = u_xx + u**2 + h`` on [0, 1] with exact solution cos(x + t)."""

    # h(s) = -sin s + cos s - cos(s)**2 = -sin s + cos s - (1 + cos 2s)/2, s = x + t
    def h_deriv(n: int):
        def f(s):
            s = np.asarray(s, dtype=float)
            base = np.cos(s + math.pi / 2 + n * math.pi / 2) + np.cos(s + n * math.pi / 2)
            dbl = 2.0 ** n * np.cos(2 * s + n * math.pi / 2) / 2
            return base - dbl - (0.5 if n == 0 else 0.0)
        return f

    source = {}
    exact = {}
    for nx in range(7):
        for nt in range(5):
            source[(nx, nt)] = _travelling(h_deriv(nx + nt))
            exact[(nx, nt)] = _travelling(_cos_derivative(nx + nt))

    psi = [
        lambda u: u * u,
        lambda u: 2.0 * u,
        lambda u: 2.0 + 0.0 * u,
        lambda u: 0.0 * u,
        lambda u: 0.0 * u,
        lambda u: 0.0 * u,
    ]
    left = [(lambda t, n=n: float(_cos_derivative(n)(t))) for n in range(5)]
    right = [(lambda t, n=n: float(_cos_derivative(n, 1.0)(t))) for n in range(5)]
    return SemilinearIBVP(
        psi=psi,
        source=source,
        boundary_left=left,
        boundary_right=right,
        initial=lambda x: np.cos(np.asarray(x, dtype=float)),
        domain=(0.0, 1.0),
        exact=exact,
        name="paper-cos",
    )


PROBLEMS = {"paper-cos": manufactured_problem}


def get_problem(name: str) -> SemilinearIBVP:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; valid: {sorted(PROBLEMS)}") from None


@dataclass
class ValidationReport:
    ok: bool
    residuals: dict = field(default_factory=dict)
    failed: list = field(default_factory=list)

    def raise_for_failure(self):
        if not self.ok:
            name = self.failed[0]
            raise ValidationError(name, self.residuals[name])


def validate_problem(p: SemilinearIBVP, samples: int = 100, seed: int = 0,
                     threshold: float = 1e-6, fd_step: float = 1e-5) -> ValidationReport:
    """Check PDE residual, boundary compatibility and supplied derivatives.

    Derivative fields (time derivatives of ``h`` and ``g``, derivatives of
    ``psi``, spatial derivatives of ``h``) are compared against central
    differences of the next lower field.
    """
    if p.exact is None:
        raise CapabilityError("exact", "validation needs the exact solution")
    rng = np.random.default_rng(seed)
    a, b = p.domain
    xs = rng.uniform(a, b, samples)
    ts = rng.uniform(0.0, 1.0, samples)
    d = fd_step
    res: dict[str, float] = {}

    u = p.u_exact(0, 0)
    u_t = p.u_exact(0, 1)
    u_xx = p.u_exact(2, 0)
    psi = p.psi[0]
    h = p.h(0, 0)
    res["pde"] = float(np.max(np.abs(u_t(xs, ts) - u_xx(xs, ts) - psi(u(xs, ts)) - h(xs, ts))))

    # exact derivative fields themselves
    for (nx, nt), f in p.exact.items():
        if (nx, nt) == (0, 0):
            continue
        if nt > 0 and (nx, nt - 1) in p.exact:
            lower = p.exact[(nx, nt - 1)]
            fd = (lower(xs, ts + d) - lower(xs, ts - d)) / (2 * d)
        elif nx > 0 and (nx - 1, nt) in p.exact:
            lower = p.exact[(nx - 1, nt)]
            fd = (lower(xs + d, ts) - lower(xs - d, ts)) / (2 * d)
        else:
            continue
        res[_partial_name("u", nx, nt)] = float(np.max(np.abs(f(xs, ts) - fd)))

    res["initial"] = float(np.max(np.abs(p.initial(xs) - u(xs, 0.0 * xs))))
    for side in ("left", "right"):
        xb = p.endpoint(side)
        data = p.boundary_left if side == "left" else p.boundary_right
        res[f"g_{side}"] = max(abs(data[0](t) - float(u(xb, t))) for t in ts[:20])
        for order in range(1, len(data)):
            lower = data[order - 1]
            res[f"g_{side}" + "_t" * order] = max(
                abs(data[order](t) - (lower(t + d) - lower(t - d)) / (2 * d)) for t in ts[:20])

    for (nx, nt), f in p.source.items():
        if (nx, nt) == (0, 0):
            continue
        if nt > 0 and (nx, nt - 1) in p.source:
            lower = p.source[(nx, nt - 1)]
            fd = (lower(xs, ts + d) - lower(xs, ts - d)) / (2 * d)
        elif nx > 0 and (nx - 1, nt) in p.source:
            lower = p.source[(nx - 1, nt)]
            fd = (lower(xs + d, ts) - lower(xs - d, ts)) / (2 * d)
        else:
            continue
        res[_partial_name("h", nx, nt)] = float(np.max(np.abs(f(xs, ts) - fd)))

    vals = u(xs, ts)
    for order in range(1, len(p.psi)):
        lower = p.psi[order - 1]
        fd = (lower(vals + d) - lower(vals - d)) / (2 * d)
        res[f"psi^({order})"] = float(np.max(np.abs(p.psi[order](vals) - fd)))

    failed = [k for k, v in res.items() if not v <= threshold]
    return ValidationReport(not failed, res, failed)
