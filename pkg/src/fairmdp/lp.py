"""Dense two-phase primal simplex for equality-form linear programs.

Problems are stated as::

    maximize    c @ x
    subject to  A @ x == b
                x[j] >= 0   unless free[j]

Free variables are split into differences of nonnegative pairs.  Pivoting
uses Dantzig's rule and falls back to Bland's rule for any pivot that would be
degenerate, which rules out cycling.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-11
COST_TOL = 1e-9
PHASE1_TOL = 1e-9
_ZERO = 1e-14


class LpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class NumericalError(ArithmeticError):
    """The simplex ran into pivots too small to trust."""


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    free: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        n = self.c.size
        if self.A.ndim != 2:
            self.A = self.A.reshape(-1, n) if self.A.size else np.zeros((0, n))
        if self.A.shape != (self.b.size, n):
            raise ValueError(f"A has shape {self.A.shape}; expected ({self.b.size}, {n})")
        self.free = np.zeros(n, dtype=bool) if self.free is None else np.asarray(self.free, dtype=bool)
        if self.free.shape != (n,):
            raise ValueError("free mask must have one entry per variable")
        for name in ("c", "A", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite coefficients")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size


@dataclass
class LpSolution:
    status: LpStatus
    x: Optional[np.ndarray] = None
    objective: float = float("nan")
    iterations: int = 0
    basis: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factor = T[:, col].copy()
    factor[row] = 0.0
    T -= np.outer(factor, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0


def _choose_row(T: np.ndarray, col: int, basis: list, bland: bool):
    m = len(basis)
    column = T[:m, col]
    eligible = column > PIVOT_TOL
    if not eligible.any():
        if np.any(column > _ZERO):
            raise NumericalError(f"only sub-tolerance pivots available in column {col}")
        return None, None
    ratios = np.full(m, np.inf)
    ratios[eligible] = T[:m, -1][eligible] / column[eligible]
    best = ratios.min()
    ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
    if bland or ties.size > 1:
        row = min(ties, key=lambda i: basis[i])
    else:
        row = int(ties[0])
    return int(row), best


def _run(T: np.ndarray, basis: list, allowed: np.ndarray, max_iter: int) -> tuple[str, int]:
    """Maximize with the objective row stored as reduced costs in ``T[-1]``."""
    m = len(basis)
    for it in range(max_iter):
        costs = T[m, :-1]
        candidates = np.flatnonzero(allowed & (costs < -COST_TOL))
        if candidates.size == 0:
            return "optimal", it
        col = int(candidates[np.argmin(costs[candidates])])
        row, ratio = _choose_row(T, col, basis, bland=False)
        if row is not None and ratio <= 1e-12:
            # degenerate step: switch to Bland's rule
            col = int(candidates[0])
            row, ratio = _choose_row(T, col, basis, bland=True)
        if row is None:
            return "unbounded", it
        _pivot(T, row, col)
        basis[row] = col
    raise NumericalError(f"simplex did not terminate within {max_iter} pivots")


def solve(lp: LinearProgram, max_iter: Optional[int] = None) -> LpSolution:
    """Solve ``lp`` (maximization) with the two-phase simplex method."""
    n_orig = lp.n_vars
    free_idx = np.flatnonzero(lp.free)
    A = np.hstack([lp.A, -lp.A[:, free_idx]])
    c = np.concatenate([lp.c, -lp.c[free_idx]])
    b = lp.b.copy()
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000

    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificials form the starting basis
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, dtype=bool)
    _, it1 = _run(T, basis, allowed, max_iter)
    infeasibility = -T[m, -1]
    if infeasibility > PHASE1_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        return LpSolution(LpStatus.INFEASIBLE, iterations=it1)

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= n:
            row = T[i, :n]
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > PIVOT_TOL:
                _pivot(T, i, j)
                basis[i] = j
                keep.append(i)
            elif np.abs(row).max() > _ZERO:
                raise NumericalError(f"cannot remove artificial variable from row {i}")
        else:
            keep.append(i)
    T = np.vstack([T[keep][:, list(range(n)) + [-1]], np.zeros((1, n + 1))])
    basis = [basis[i] for i in keep]
    rows = np.array(keep, dtype=int)

    # phase 2
    cB = c[basis]
    T[-1, :n] = cB @ T[:-1, :n] - c
    T[-1, -1] = cB @ T[:-1, -1]
    status, it2 = _run(T, basis, np.ones(n, dtype=bool), max_iter)
    if status == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED, objective=float("inf"), iterations=it1 + it2)

    # recompute the basic solution from the original data to shed pivoting error
    x = np.zeros(n)
    if basis:
        B = A[np.ix_(rows, basis)]
        try:
            x[basis] = np.linalg.solve(B, b[rows])
        except np.linalg.LinAlgError:
            raise NumericalError("optimal basis is singular") from None
    x[np.abs(x) < _ZERO] = 0.0
    if np.any(x < -1e-9):
        raise NumericalError("basic solution has negative components")
    x = np.maximum(x, 0.0)
    out = x[:n_orig].copy()
    out[free_idx] -= x[n_orig:]
    residual = np.abs(lp.A @ out - lp.b).max(initial=0.0)
    if residual > FEAS_TOL:
        raise NumericalError(f"equality residual {residual:.3g} exceeds {FEAS_TOL}")
    return LpSolution(LpStatus.OPTIMAL, out, float(lp.c @ out), it1 + it2, basis)
