"""Thin wrapper around scipy's HiGHS backend: maximise ``c @ x`` s.t. ``A_eq x = b_eq``, ``lo <= x <= hi``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class SolverError(RuntimeError):
    """The solver broke down numerically or hit a limit."""


class ModelInfeasibleError(RuntimeError):
    """The model reported infeasible or unbounded; cannot happen for well-formed dispatch models."""


@dataclass(frozen=True)
class LPSolution:
    x: np.ndarray
    objective: float
    iterations: int


def solve_max(c, A_eq, b_eq, lower, upper, tol: float = 1e-6) -> LPSolution:
    if not tol > 0:
        raise ValueError("tol must be > 0")
    feas = max(1e-10, min(1e-7, tol / 10))
    res = linprog(
        -np.asarray(c, dtype=float),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=np.column_stack([lower, upper]),
        method="highs",
        options={
            "primal_feasibility_tolerance": feas,
            "dual_feasibility_tolerance": feas,
            "presolve": True,
        },
    )
    if res.status in (2, 3):
        raise ModelInfeasibleError(f"LP status {res.status}: {res.message}")
    if res.status != 0:
        raise SolverError(f"LP status {res.status}: {res.message}")
    return LPSolution(np.asarray(res.x), float(-res.fun), int(getattr(res, "nit", 0)))
