"""Convex-order-preserving finite approximations of martingale dynamics.

The package combines primal (nearest-neighbour) and dual (barycentric
splitting) quantization of 1D laws, closed-form martingale transition
kernels for ARCH dynamics with centered truncated noise, a dense LP solver
for martingale-optimal-transport price bounds and convex-order testing, and
Monte Carlo machinery validating the truncation/quantization error bounds.
"""

from . import archmc, chain, dual, laws, lp, mot, order, primal, quadrature, rng
from .errors import (
    BudgetExceeded,
    DimensionMismatch,
    DivisibilityError,
    DomainError,
    EmptyCellError,
    HullViolation,
    MartquantError,
    NotInConvexOrder,
    OutOfHullError,
    OutOfScopeError,
    QuadratureError,
    SupportError,
)

__version__ = "0.1.0"

__all__ = [
    "archmc",
    "chain",
    "dual",
    "laws",
    "lp",
    "mot",
    "order",
    "primal",
    "quadrature",
    "rng",
    "BudgetExceeded",
    "DimensionMismatch",
    "DivisibilityError",
    "DomainError",
    "EmptyCellError",
    "HullViolation",
    "MartquantError",
    "NotInConvexOrder",
    "OutOfHullError",
    "OutOfScopeError",
    "QuadratureError",
    "SupportError",
    "__version__",
]
