"""Dense linear programming: two-phase primal simplex.

Standard form: optimize ``c.x`` subject to ``A x = b``, ``x >= 0``.  Pricing
uses steepest-edge (reduced cost over tableau column norm) and switches to
Bland's rule whenever the objective stalls (anti-cycling), switching back
once progress resumes; both rules and every tie-break are index-based, so
runs are deterministic.
The tableau is recomputed from the basis at a fixed pivot cadence and before
any optimality claim, which keeps thousands of dense pivots from eroding
feasibility.  On infeasibility the phase-1 duals give the Farkas certificate
``y`` with ``y.A <= 0`` and ``y.b > 0``.

Callers that know a near-feasible vertex can pass ``basis_hint`` (column
indices, artificials encoded as ``n_vars + row``); the solver flips rows to
sign-correct hinted artificial values and falls back to the all-artificial
start if the hint is unusable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = ["LinearProgram", "LpSolution", "solve", "export_lp_text"]

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-8
_REFACTOR_EVERY = 400


@dataclass(frozen=True)
class LinearProgram:
    """min or max of ``objective . x`` over ``{A x = b, x >= 0}``."""

    objective: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    sense: str = "min"

    def __init__(self, objective, constraint_matrix, rhs, sense="min"):
        objective = np.asarray(objective, dtype=float).reshape(-1)
        constraint_matrix = np.atleast_2d(np.asarray(constraint_matrix, dtype=float))
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        if constraint_matrix.shape != (rhs.size, objective.size):
            raise DomainError(
                f"inconsistent LP dimensions: A is {constraint_matrix.shape}, "
                f"c has {objective.size}, b has {rhs.size}"
            )
        if not (
            np.all(np.isfinite(objective))
            and np.all(np.isfinite(constraint_matrix))
            and np.all(np.isfinite(rhs))
        ):
            raise DomainError("LP data must be finite")
        if sense not in ("min", "max"):
            raise DomainError("sense must be 'min' or 'max'")
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "constraint_matrix", constraint_matrix)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "sense", sense)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size


@dataclass(frozen=True)
class LpSolution:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray | None
    objective_value: float | None
    duals: np.ndarray | None
    primal_residual: float
    slackness_residual: float
    iterations: int
    farkas: np.ndarray | None = field(default=None)


class _Tableau:
    def __init__(self, a, b, basis):
        self.m, self.n = a.shape
        self.full = np.hstack([a, np.eye(self.m)])
        self.b = b
        self.basis = list(basis)
        self.t = np.zeros((self.m + 1, self.n + self.m + 1))
        self.iterations = 0
        self.since_refactor = 0
        self.bland = False
        self.stall = 0
        self.last_obj = np.inf

    def refactor(self, cost) -> bool:
        basis_mat = self.full[:, self.basis]
        try:
            sol = np.linalg.solve(basis_mat, np.hstack([self.full, self.b[:, None]]))
        except np.linalg.LinAlgError:
            return False
        self.t[: self.m, :-1] = sol[:, :-1]
        self.t[: self.m, -1] = sol[:, -1]
        cb = cost[self.basis]
        self.t[-1, :-1] = cost - cb @ sol[:, :-1]
        self.t[-1, -1] = -cb @ sol[:, -1]
        self.since_refactor = 0
        return True

    def _entering(self, allowed: int) -> int:
        row = self.t[-1, :allowed]
        eligible = np.flatnonzero(row < -_PIVOT_TOL)
        if eligible.size == 0:
            return -1
        if self.bland:
            return int(eligible[0])
        # steepest edge: reduced cost normalized by the tableau column length
        cols = self.t[: self.m, eligible]
        norms = np.sqrt(np.einsum("ij,ij->j", cols, cols) + 1.0)
        return int(eligible[np.argmin(row[eligible] / norms)])

    def _leaving(self, col: int) -> int:
        column = self.t[:-1, col]
        rhs = self.t[:-1, -1]
        rows = np.flatnonzero(column > _PIVOT_TOL)
        if rows.size == 0:
            return -1
        ratios = np.maximum(rhs[rows], 0.0) / column[rows]
        rmin = ratios.min()
        ties = rows[ratios <= rmin + 1e-10 * (1.0 + abs(rmin))]
        if self.bland:
            basis_arr = np.asarray(self.basis)
            return int(ties[np.argmin(basis_arr[ties])])
        return int(ties[np.argmax(column[ties])])

    def _pivot(self, row: int, col: int):
        t = self.t
        t[row] /= t[row, col]
        factors = t[:, col].copy()
        factors[row] = 0.0
        t -= np.outer(factors, t[row])
        t[:, col] = 0.0
        t[row, col] = 1.0
        self.basis[row] = col
        self.iterations += 1
        self.since_refactor += 1

    def run(self, cost, allowed: int, max_iter: int) -> str:
        self.bland = False
        self.stall = 0
        self.last_obj = np.inf
        while self.iterations < max_iter:
            if self.since_refactor >= _REFACTOR_EVERY:
                self.refactor(cost)
            obj = self.t[-1, -1]
            if obj < self.last_obj - 1e-13:
                self.stall = 0
                self.bland = False
            else:
                self.stall += 1
                if self.stall > self.m + 20:
                    self.bland = True
            self.last_obj = obj
            col = self._entering(allowed)
            if col < 0:
                # confirm optimality on a freshly refactored tableau
                self.refactor(cost)
                col = self._entering(allowed)
                if col < 0:
                    return "optimal"
            row = self._leaving(col)
            if row < 0:
                return "unbounded"
            self._pivot(row, col)
        return "iteration_limit"


def _hinted_start(a, b, basis_hint, n):
    """Validate a caller basis hint, flipping rows so hinted artificial
    values come out nonnegative.  Returns (a, b, flip, basis) or None."""
    m = a.shape[0]
    basis = list(dict.fromkeys(int(j) for j in basis_hint))
    if len(basis) != m or any(j < 0 or j >= n + m for j in basis):
        return None
    full = np.hstack([a, np.eye(m)])
    try:
        values = np.linalg.solve(full[:, basis], b)
    except np.linalg.LinAlgError:
        return None
    flip = np.zeros(m, dtype=bool)
    for pos, j in enumerate(basis):
        if values[pos] < -_FEAS_TOL and j < n:
            return None  # structural variable negative: hint unusable
        if values[pos] < 0.0 and j >= n:
            flip[j - n] = True
    a = a.copy()
    b = b.copy()
    a[flip] *= -1.0
    b[flip] *= -1.0
    try:
        values = np.linalg.solve(np.hstack([a, np.eye(m)])[:, basis], b)
    except np.linalg.LinAlgError:
        return None
    if np.any(values < -_FEAS_TOL):
        return None
    return a, b, flip, basis


def solve(lp: LinearProgram, max_iter: int = 200000, basis_hint=None) -> LpSolution:
    """Two-phase simplex.  Returns duals at optimality and a Farkas
    certificate on infeasibility."""
    minimize = lp.sense == "min"
    c = lp.objective if minimize else -lp.objective
    m, n = lp.n_rows, lp.n_vars

    started = None
    if basis_hint is not None:
        started = _hinted_start(lp.constraint_matrix, lp.rhs, basis_hint, n)
    if started is not None:
        a, b, flip, basis = started
    else:
        a = lp.constraint_matrix.copy()
        b = lp.rhs.copy()
        flip = b < 0.0
        a[flip] *= -1.0
        b[flip] *= -1.0
        basis = list(range(n, n + m))

    tab = _Tableau(a, b, basis)
    phase1_cost = np.zeros(n + m)
    phase1_cost[n:] = 1.0
    if not tab.refactor(phase1_cost):
        tab.basis = list(range(n, n + m))
        tab.refactor(phase1_cost)
    status = tab.run(phase1_cost, n, max_iter)
    if status == "iteration_limit":
        return LpSolution("iteration_limit", None, None, None, np.inf, np.inf, tab.iterations)
    tab.refactor(phase1_cost)
    phase1_value = -tab.t[-1, -1]
    if phase1_value > _FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
        y = 1.0 - tab.t[-1, n : n + m]
        y = np.where(flip, -y, y)
        return LpSolution(
            "infeasible", None, None, None, np.inf, np.inf, tab.iterations, farkas=y
        )
    # degenerate artificials still in the basis would be free to grow during
    # phase 2 (the ratio test only guards rows with positive entries); pivot
    # them onto structural columns while their value is zero, which keeps the
    # point unchanged.  A row with no structural coefficient is redundant and
    # its artificial can safely stay at zero.
    for r in range(m):
        if tab.basis[r] >= n:
            structurals = np.flatnonzero(np.abs(tab.t[r, :n]) > 1e-7)
            if structurals.size:
                tab._pivot(r, int(structurals[0]))

    phase2_cost = np.zeros(n + m)
    phase2_cost[:n] = c
    tab.refactor(phase2_cost)
    status = tab.run(phase2_cost, n, max_iter)
    if status == "iteration_limit":
        return LpSolution("iteration_limit", None, None, None, np.inf, np.inf, tab.iterations)
    if status == "unbounded":
        return LpSolution("unbounded", None, None, None, np.inf, np.inf, tab.iterations)

    x = np.zeros(n)
    for r, j in enumerate(tab.basis):
        if j < n:
            x[j] = max(tab.t[r, -1], 0.0)
    duals = -tab.t[-1, n : n + m].copy()
    duals = np.where(flip, -duals, duals)
    if not minimize:
        duals = -duals
    obj = float(lp.objective @ x)
    primal_residual = float(np.abs(lp.constraint_matrix @ x - lp.rhs).max(initial=0.0))
    if primal_residual > 100.0 * _FEAS_TOL * max(1.0, float(np.abs(lp.rhs).max(initial=0.0))):
        raise DomainError(
            f"simplex lost primal feasibility (residual {primal_residual:.3e}); "
            "the instance is too ill-conditioned for the dense tableau"
        )
    reduced = tab.t[-1, :n]
    slackness = float(np.abs(x * reduced).max(initial=0.0))
    return LpSolution("optimal", x, obj, duals, primal_residual, slackness, tab.iterations)


def _fmt(v: float) -> str:
    return format(v, ".17g")


def export_lp_text(lp: LinearProgram, name: str = "problem") -> str:
    """Fixed-column LP text format (objective, ST, BOUNDS, END sections);
    floats carry 17 significant digits so the export is byte-stable."""
    lines = [f"\\ {name}", "Minimize" if lp.sense == "min" else "Maximize"]
    terms = [
        f"{'+' if cj >= 0 else '-'} {_fmt(abs(cj))} x{j}"
        for j, cj in enumerate(lp.objective)
    ]
    lines.append(" obj: " + (" ".join(terms) if terms else "0"))
    lines.append("Subject To")
    for i in range(lp.n_rows):
        row = lp.constraint_matrix[i]
        nz = np.flatnonzero(row)
        body = " ".join(
            f"{'+' if row[j] >= 0 else '-'} {_fmt(abs(row[j]))} x{j}" for j in nz
        )
        lines.append(f" c{i}: {body if body else '0 x0'} = {_fmt(lp.rhs[i])}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lines.append(f" 0 <= x{j}")
    lines.append("End")
    return "\n".join(lines) + "\n"
