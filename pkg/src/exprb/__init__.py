"""Exponential Rosenbrock methods with boundary corrections for semilinear
parabolic problems with time-dependent Dirichlet data."""

__version__ = "0.1.0"
