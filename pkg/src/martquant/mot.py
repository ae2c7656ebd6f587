"""Martingale-optimal-transport bounds on finitely supported marginals.

Given marginals in convex order and a payoff on the product grid, the
infimum and supremum of the expected payoff over all martingale couplings
are linear programs or, equivalently, price bounds consistent with the
marginals.  This module assembles those LPs (any number of marginals,
budget-guarded), solves both senses, and drives the quantization stability
experiment: primal-quantize the first marginal, dual-quantize the second,
and track the bounds as the grids refine.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .dual import dual_distortion, dual_lloyd_1d
from .errors import BudgetExceeded, DomainError, NotInConvexOrder
from .laws import FiniteAtoms, Law1D
from .order import DiscreteDistribution, convex_order_check, coupling_lp
from .primal import distortion, lloyd_1d

__all__ = [
    "MotProblem",
    "MotResult",
    "mot_bounds",
    "stability_experiment",
    "w2_coupling_bound",
    "spread_payoff",
    "forward_start_payoff",
    "quadratic_payoff",
]


def spread_payoff(x, y):
    return np.abs(y - x)


def quadratic_payoff(x, y):
    return (y - x) ** 2


def forward_start_payoff(strike: float = 0.0):
    def payoff(x, y):
        return np.maximum(y - x - strike, 0.0)

    return payoff


@dataclass(frozen=True)
class MotProblem:
    """Marginals (in convex order), a payoff, and a variable budget.

    ``payoff`` is either an ndarray of shape ``(N_0, ..., N_n)`` or a
    callable receiving one ``(..., d)`` point block per marginal,
    broadcastable over leading axes.
    """

    marginals: tuple
    payoff: object
    budget: int = 1_000_000

    def __init__(self, marginals, payoff, budget: int = 1_000_000):
        marginals = tuple(marginals)
        if len(marginals) < 2:
            raise DomainError("need at least two marginals")
        dim = marginals[0].dim
        if any(m.dim != dim for m in marginals):
            raise DomainError("marginals must share one dimension")
        object.__setattr__(self, "marginals", marginals)
        object.__setattr__(self, "payoff", payoff)
        object.__setattr__(self, "budget", int(budget))

    @property
    def sizes(self) -> tuple:
        return tuple(m.n_atoms for m in self.marginals)

    def cost_tensor(self) -> np.ndarray:
        sizes = self.sizes
        if isinstance(self.payoff, np.ndarray):
            if self.payoff.shape != sizes:
                raise DomainError(
                    f"payoff table shape {self.payoff.shape} != grid sizes {sizes}"
                )
            return np.asarray(self.payoff, dtype=float)
        blocks = []
        n_total = len(sizes)
        for k, marg in enumerate(self.marginals):
            shape = [1] * n_total + [marg.dim]
            shape[k] = sizes[k]
            pts = marg.points.reshape(shape)
            if marg.dim == 1:
                pts = pts[..., 0]
            blocks.append(pts)
        return np.broadcast_to(
            np.asarray(self.payoff(*blocks), dtype=float), sizes
        ).astype(float)


@dataclass(frozen=True)
class MotResult:
    lower: float
    upper: float
    coupling_lower: list
    coupling_upper: list
    marginal_residual: float
    martingale_residual: float
    iterations: tuple = field(default=(0, 0))


def _sparse_coupling(x: np.ndarray, sizes, threshold: float = 1e-12) -> list:
    flat = np.flatnonzero(x > threshold)
    return [(tuple(np.unravel_index(f, sizes)), float(x[f])) for f in flat]


def _check_convex_order(marginals):
    for k in range(len(marginals) - 1):
        check = convex_order_check(marginals[k], marginals[k + 1])
        if not check.dominated:
            raise NotInConvexOrder(
                f"marginals {k} and {k + 1} are not in convex order "
                f"(status {check.status})",
                witness=check.witness,
            )


def _multi_marginal_lp(problem: MotProblem):
    """Rows: per-marginal masses, then per-prefix martingale constraints."""
    marginals = problem.marginals
    sizes = problem.sizes
    nvar = int(np.prod(sizes))
    d = marginals[0].dim
    n_steps = len(marginals) - 1
    rows = []
    rhs = []
    flat = np.arange(nvar).reshape(sizes)
    for k, marg in enumerate(marginals):
        for i in range(sizes[k]):
            row = np.zeros(nvar)
            row[np.take(flat, i, axis=k).ravel()] = 1.0
            rows.append(row)
            rhs.append(marg.weights[i])
    for k in range(n_steps):
        prefix_sizes = sizes[: k + 1]
        for prefix in np.ndindex(*prefix_sizes):
            block = flat[prefix]  # shape sizes[k+1:]
            x_k = marginals[k].points[prefix[-1]]
            pts_next = marginals[k + 1].points
            for axis in range(d):
                diff = pts_next[:, axis] - x_k[axis]
                scale = max(1.0, float(np.abs(diff).max()))
                row = np.zeros(nvar)
                cols = block.reshape(sizes[k + 1], -1)
                for j in range(sizes[k + 1]):
                    row[cols[j]] = diff[j] / scale
                rows.append(row)
                rhs.append(0.0)
    return np.asarray(rows), np.asarray(rhs), nvar


def mot_bounds(problem: MotProblem, max_iter: int = 400000) -> MotResult:
    """Lower and upper price bounds with the optimal couplings.

    Marginals are verified to be in convex order first (otherwise the LP is
    infeasible and :class:`NotInConvexOrder` carries the witness).
    """
    sizes = problem.sizes
    nvar = int(np.prod(sizes))
    if nvar > problem.budget:
        raise BudgetExceeded(f"{nvar} coupling variables exceed budget {problem.budget}")
    _check_convex_order(problem.marginals)
    cost = problem.cost_tensor().ravel()
    if len(problem.marginals) == 2:
        a, b, _, hint, _ = coupling_lp(problem.marginals[0], problem.marginals[1])
    else:
        a, b, nvar = _multi_marginal_lp(problem)
        hint = None
    solutions = []
    for sense in ("min", "max"):
        sol = lpmod.solve(
            lpmod.LinearProgram(cost, a, b, sense=sense),
            max_iter=max_iter,
            basis_hint=hint,
        )
        if sol.status != "optimal":
            raise DomainError(f"MOT LP ({sense}) ended with status {sol.status}")
        solutions.append(sol)
    lo, hi = solutions
    marg_resid = max(lo.primal_residual, hi.primal_residual)
    if len(problem.marginals) == 2:
        mart_resid = max(
            _martingale_residual(problem, lo.x), _martingale_residual(problem, hi.x)
        )
    else:
        mart_resid = marg_resid  # martingale rows are part of the LP system
    return MotResult(
        lower=lo.objective_value,
        upper=hi.objective_value,
        coupling_lower=_sparse_coupling(lo.x, sizes),
        coupling_upper=_sparse_coupling(hi.x, sizes),
        marginal_residual=marg_resid,
        martingale_residual=mart_resid,
        iterations=(lo.iterations, hi.iterations),
    )


def _martingale_residual(problem: MotProblem, x: np.ndarray) -> float:
    mu, nu = problem.marginals
    plan = x.reshape(mu.n_atoms, nu.n_atoms)
    bary = plan @ nu.points
    return float(np.abs(bary - mu.weights[:, None] * mu.points).max(initial=0.0))


def _quantize_primal(law_or_dd, n: int) -> DiscreteDistribution:
    if isinstance(law_or_dd, DiscreteDistribution):
        law = FiniteAtoms(law_or_dd.points_1d, law_or_dd.weights)
    elif isinstance(law_or_dd, Law1D):
        law = law_or_dd
    else:
        raise DomainError("expected a 1D law or a DiscreteDistribution")
    res = lloyd_1d(law, n)
    return DiscreteDistribution(res.grid, res.weights)


def _quantize_dual(law_or_dd, m: int) -> DiscreteDistribution:
    if isinstance(law_or_dd, DiscreteDistribution):
        law = FiniteAtoms(law_or_dd.points_1d, law_or_dd.weights)
    elif isinstance(law_or_dd, Law1D):
        law = law_or_dd
    else:
        raise DomainError("expected a 1D law or a DiscreteDistribution")
    res = dual_lloyd_1d(law, m)
    keep = res.weights > 0.0
    w = res.weights[keep]
    return DiscreteDistribution(res.grid[keep], w / w.sum())


def stability_experiment(mu0, mu1, payoff, levels) -> list[dict]:
    """Bounds table along a refinement schedule.

    ``mu0`` is primally quantized and ``mu1`` dually quantized at each level
    ``(N, M)``, matching the roles that preserve convex order from below and
    above; rows carry the level, the bounds, and the runtime.
    """
    rows = []
    for n, m in levels:
        t0 = time.perf_counter()
        qa = _quantize_primal(mu0, int(n))
        qb = _quantize_dual(mu1, int(m))
        result = mot_bounds(MotProblem([qa, qb], payoff))
        rows.append(
            {
                "N": int(n),
                "M": int(m),
                "lower": result.lower,
                "upper": result.upper,
                "runtime_ms": 1000.0 * (time.perf_counter() - t0),
            }
        )
    return rows


def w2_coupling_bound(mu0: Law1D, mu1: Law1D, n: int, m: int) -> float:
    """Quadratic-Wasserstein accuracy of the quantized marginal pair:
    sqrt of (primal distortion of mu0 at N)^2 + (dual distortion of mu1 at M)^2."""
    if mu0.support[0] == mu0.support[1]:
        e = 0.0
    else:
        primal = lloyd_1d(mu0, n)
        e = distortion(primal.grid, mu0, p=2.0)
    if mu1.support[0] == mu1.support[1]:
        d = 0.0
    else:
        dual_res = dual_lloyd_1d(mu1, m)
        d = dual_distortion(dual_res.grid, mu1)
    return float(np.hypot(e, d))
