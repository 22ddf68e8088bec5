"""Convergence and efficiency studies, CSV output and the command line."""

from __future__ import annotations

import argparse
import csv
import json
import math
import statistics
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import boundary_terms as bt
from .discretization import build_grid
from .integrators import (MOL, TABLEAUX, Scheme, corrected, corrected_step, get_tableau,
                          integrate, local_error_sweep, make_context, mol_step, StepState,
                          compiled_ledgers, step_count)
from .phi import PhiEngine
from .problem import PROBLEMS, get_problem, validate_problem

FIELDS = ["k", "local_error", "local_order", "global_error", "global_order", "cpu_seconds",
          "local_error_max", "global_error_max", "status"]


class UndefinedOrder(ValueError):
    pass


def estimate_order(e_coarse: float, e_fine: float, k_coarse: float, k_fine: float) -> float:
    if not (e_coarse > 0 and e_fine > 0):
        raise UndefinedOrder("errors must be positive")
    if not (k_fine > 0 and k_coarse > k_fine):
        raise UndefinedOrder("need 0 < k_fine < k_coarse")
    return math.log(e_coarse / e_fine) / math.log(float(k_coarse) / float(k_fine))


def parse_k_list(text: str) -> list[Fraction]:
    text = text.strip()
    if not text:
        return []
    return [Fraction(item.strip()) for item in text.split(",")]


@dataclass
class StudyConfig:
    problem: str = "paper-cos"
    method: str = "rosenbrock-euler"
    scheme: str = "mol"
    p: int = 0
    N: int = 999
    k_list: list = field(default_factory=list)
    T: Fraction = Fraction(1)
    phi_tol: float = 1e-10
    out: Optional[str] = None
    reps: int = 3

    def __post_init__(self):
        self.k_list = [Fraction(k) for k in self.k_list]
        self.T = Fraction(self.T)
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; valid: {sorted(PROBLEMS)}")
        if self.method not in TABLEAUX:
            raise ValueError(f"unknown method {self.method!r}; valid: {sorted(TABLEAUX)}")
        self.scheme_obj()  # validates scheme and p
        if any(a <= b for a, b in zip(self.k_list, self.k_list[1:])):
            raise ValueError("k-list must be strictly decreasing")
        for k in self.k_list:
            step_count(k, self.T)

    def scheme_obj(self) -> Scheme:
        if self.scheme == "mol":
            return MOL
        if self.scheme == "corrected":
            return corrected(self.p)
        raise ValueError(f"unknown scheme {self.scheme!r}; valid: ['corrected', 'mol']")

    def context(self):
        return make_context(get_problem(self.problem), build_grid(self.N), get_tableau(self.method),
                            engine=PhiEngine(tol=self.phi_tol))

    def header(self) -> dict:
        return {
            "problem": self.problem, "method": self.method, "scheme": self.scheme, "p": self.p,
            "N": self.N, "k_list": ",".join(str(k) for k in self.k_list), "T": str(self.T),
            "phi_tol": repr(self.phi_tol), "reps": self.reps, "version": __version__,
        }


@dataclass
class StudyRow:
    """One row of a convergence study.

    ``local_error`` is the error of the first step (from ``t = 0``);
    ``local_error_max`` is the maximum over all step starts.  ``global_error``
    is measured at ``T``; ``global_error_max`` is the maximum over the grid.
    """

    k: Fraction
    local_error: float = math.nan
    local_order: Optional[float] = None
    global_error: float = math.nan
    global_order: Optional[float] = None
    cpu_seconds: float = math.nan
    local_error_max: float = math.nan
    global_error_max: float = math.nan
    status: str = ""


def _orders(rows: list[StudyRow]):
    for prev, row in zip(rows, rows[1:]):
        for name in ("local", "global"):
            try:
                order = estimate_order(getattr(prev, f"{name}_error"), getattr(row, f"{name}_error"),
                                       prev.k, row.k)
            except UndefinedOrder:
                order = None
            setattr(row, f"{name}_order", order)


def run_convergence(config: StudyConfig) -> list[StudyRow]:
    ctx = config.context()
    scheme = config.scheme_obj()
    rows = []
    for k in config.k_list:
        row = StudyRow(k)
        try:
            loc = local_error_sweep(ctx, scheme, k, config.T)
            tr = integrate(ctx, scheme, k, config.T)
            row.local_error, row.local_error_max = loc.first, loc.max
            row.global_error, row.global_error_max = tr.final_error, tr.max_error
            row.cpu_seconds = tr.seconds
        except Exception as exc:  # recorded per row, study continues
            row.status = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    _orders(rows)
    if config.out:
        write_csv(config.out, config, rows)
    return rows


@dataclass
class EfficiencyRow:
    k: Fraction
    global_error: float
    cpu_seconds: float
    reps: int
    status: str = ""


def run_efficiency(config: StudyConfig) -> list[EfficiencyRow]:
    """Median wall time of the step loop per ``k``."""
    if config.reps < 3:
        raise ValueError("timing needs at least 3 repetitions")
    ctx = config.context()
    scheme = config.scheme_obj()
    rows = []
    for k in config.k_list:
        try:
            times, err = [], None
            for _ in range(config.reps):
                tr = integrate(ctx, scheme, k, config.T)
                times.append(tr.seconds)
                err = tr.final_error
            rows.append(EfficiencyRow(k, err, statistics.median(times), config.reps))
        except Exception as exc:
            rows.append(EfficiencyRow(k, math.nan, math.nan, config.reps, f"{type(exc).__name__}: {exc}"))
    if config.out:
        write_efficiency_csv(config.out, config, rows)
    return rows


def time_at_error(rows: Sequence[EfficiencyRow], target: float) -> float:
    """Log-log interpolation of cpu time at a given global error."""
    pts = sorted((r.global_error, r.cpu_seconds) for r in rows if r.global_error > 0 and r.cpu_seconds > 0)
    if len(pts) < 2:
        raise ValueError("need two timed rows")
    le = np.log([p[0] for p in pts])
    lt = np.log([p[1] for p in pts])
    x = math.log(target)
    i = int(np.clip(np.searchsorted(le, x), 1, len(pts) - 1))
    w = (x - le[i - 1]) / (le[i] - le[i - 1])
    return float(math.exp(lt[i - 1] + w * (lt[i] - lt[i - 1])))


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write(path, header: dict, fields: list[str], rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[f]) for f in fields])


def write_csv(path, config: StudyConfig, rows: list[StudyRow]):
    _write(path, config.header(), FIELDS, [vars(r) for r in rows])


def write_efficiency_csv(path, config: StudyConfig, rows: list[EfficiencyRow]):
    _write(path, config.header(), ["k", "global_error", "cpu_seconds", "reps", "status"], [vars(r) for r in rows])


def read_csv(path) -> tuple[dict, list[dict]]:
    """Return ``(header, rows)``; numeric fields come back as float, ``k`` as Fraction."""
    header, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
            else:
                lines.append(line)
    rows = []
    for rec in csv.DictReader(lines):
        row = {}
        for key, value in rec.items():
            if key == "k":
                row[key] = Fraction(value)
            elif key == "status":
                row[key] = value
            elif key == "reps":
                row[key] = int(value)
            else:
                row[key] = float(value) if value else None
        rows.append(row)
    return header, rows


def load_expectations() -> dict:
    text = resources.files("exprb").joinpath("data/reference_values.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# validation


def property_checks(problem_name: str = "paper-cos") -> dict[str, bool]:
    """Quick oracle checks run by the ``validate`` subcommand."""
    out = {}
    out["tableaux consistent"] = all(get_tableau(n).is_consistent() for n in TABLEAUX)
    lazy = True
    for n in TABLEAUX:
        for p in (1, 2, 3):
            stages, step = compiled_ledgers(get_tableau(n), p)
            for led in [*stages, step]:
                lazy &= not any(bt.needs_space_derivative(kind, m) for kind, m in led.atoms())
    out["ledger needs no numeric derivatives"] = lazy
    ctx = make_context(get_problem(problem_name), build_grid(49), get_tableau("rosenbrock-euler"))
    U = np.cos(ctx.x)
    a = mol_step(StepState(0.3, U), 0.1, ctx).U
    b = corrected_step(StepState(0.3, U), 0.1, ctx, 1).U
    out["corrected p=1 matches method of lines"] = bool(np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a)))
    return out


# ---------------------------------------------------------------------------
# command line


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exprb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("converge", "efficiency", "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("--problem", default="paper-cos", choices=sorted(PROBLEMS))
        sp.add_argument("--method", default="rosenbrock-euler", choices=sorted(TABLEAUX))
        sp.add_argument("--scheme", default="mol", choices=["mol", "corrected"])
        sp.add_argument("--p", type=int, default=None, choices=[1, 2, 3])
        sp.add_argument("--grid-n", type=int, default=999)
        sp.add_argument("--k-list", default="1/5,1/10,1/20,1/40,1/80,1/160")
        sp.add_argument("--final-time", default="1")
        sp.add_argument("--phi-tol", type=float, default=1e-10)
        sp.add_argument("--out", default=None)
        sp.add_argument("--reps", type=int, default=3)
    return parser


def _print_rows(rows: list[StudyRow]):
    print(f"{'k':>7} {'local':>11} {'order':>6} {'global':>11} {'order':>6} {'cpu[s]':>8}")
    for r in rows:
        lo = f"{r.local_order:6.2f}" if r.local_order is not None else " " * 6
        go = f"{r.global_order:6.2f}" if r.global_order is not None else " " * 6
        print(f"{str(r.k):>7} {r.local_error:11.4e} {lo} {r.global_error:11.4e} {go} {r.cpu_seconds:8.3f}"
              + (f"  {r.status}" if r.status else ""))


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "validate":
        report = validate_problem(get_problem(args.problem))
        ok = report.ok
        print(f"problem {args.problem}: {'ok' if report.ok else 'FAILED ' + ', '.join(report.failed)}")
        for name, passed in property_checks(args.problem).items():
            print(f"{name}: {'ok' if passed else 'FAILED'}")
            ok &= passed
        return 0 if ok else 1

    if args.scheme == "corrected" and args.p is None:
        print("exprb: error: --scheme corrected needs --p", file=sys.stderr)
        return 2
    try:
        config = StudyConfig(args.problem, args.method, args.scheme, args.p or 0, args.grid_n,
                             parse_k_list(args.k_list), Fraction(args.final_time), args.phi_tol,
                             args.out, args.reps)
    except (ValueError, ZeroDivisionError) as exc:
        print(f"exprb: error: {exc}", file=sys.stderr)
        return 2

    if args.command == "converge":
        _print_rows(run_convergence(config))
    else:
        try:
            rows = run_efficiency(config)
        except ValueError as exc:
            print(f"exprb: error: {exc}", file=sys.stderr)
            return 2
        for r in rows:
            print(f"{str(r.k):>7} {r.global_error:11.4e} {r.cpu_seconds:9.4f}")
    return 0


def main():  # console-script entry point
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
