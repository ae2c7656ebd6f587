"""Analytic one-dimensional laws with closed-form F and K.

Every law exposes the cumulative distribution function ``F(z) = P(Z <= z)``
and the partial first moment ``K(z) = E[Z 1{Z <= z}]``.  These two closed
forms are all the 1D quantization and transition-kernel machinery needs.
``cdf_left`` gives the left limit ``F(z-)``, which differs from ``F`` only
for laws with atoms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainError
from .quadrature import adaptive_simpson
from .rng import make_generator

__all__ = [
    "Law1D",
    "Uniform",
    "Normal",
    "Exponential",
    "PowerDensity2x",
    "PointMass",
    "FiniteAtoms",
    "TruncatedLaw",
    "RadialLaw",
    "law_from_json",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _as_array(z):
    arr = np.asarray(z, dtype=float)
    return arr, arr.ndim == 0


def _ret(values, scalar):
    return float(values) if scalar else values


class Law1D:
    """Base class: a 1D probability law with closed-form F and K."""

    def cdf(self, z):
        raise NotImplementedError

    def cdf_left(self, z):
        # Continuous laws: F(z-) = F(z).  Atomic laws override.
        return self.cdf(z)

    def partial_moment(self, z):
        raise NotImplementedError

    def quantile(self, u):
        raise NotImplementedError

    def density(self, z):
        raise DomainError(f"{type(self).__name__} has no density")

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def integration_bounds(self) -> tuple[float, float]:
        """Finite interval carrying all but a negligible share of E Z^2."""
        return self.support

    def decompose(self):
        """Split the law into a density part and an atomic part.

        Returns ``(density_fn_or_None, bounds, atom_points, atom_masses)``;
        pure continuous laws have empty atom arrays, purely atomic laws a
        ``None`` density.
        """
        return self.density, self.integration_bounds(), np.empty(0), np.empty(0)

    def sample(self, n: int, seed: int, stream: int = 0) -> np.ndarray:
        """Inverse-transform sample of size ``n``, reproducible by seed."""
        if n < 1:
            raise DomainError("sample size must be >= 1")
        u = make_generator(seed, stream).random(n)
        np.maximum(u, 1e-300, out=u)
        return np.asarray(self.quantile(u), dtype=float).reshape(n)

    def _check_u(self, u):
        arr, scalar = _as_array(u)
        if np.any(arr <= 0.0) or np.any(arr >= 1.0):
            raise DomainError("quantile level must lie in (0, 1)")
        return arr, scalar


@dataclass(frozen=True)
class Uniform(Law1D):
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise DomainError("Uniform requires a < b")

    def cdf(self, z):
        z, scalar = _as_array(z)
        return _ret(np.clip((z - self.a) / (self.b - self.a), 0.0, 1.0), scalar)

    def partial_moment(self, z):
        z, scalar = _as_array(z)
        zc = np.clip(z, self.a, self.b)
        return _ret((zc * zc - self.a * self.a) / (2.0 * (self.b - self.a)), scalar)

    def quantile(self, u):
        u, scalar = self._check_u(u)
        return _ret(self.a + (self.b - self.a) * u, scalar)

    def density(self, z):
        z, scalar = _as_array(z)
        inside = (z >= self.a) & (z <= self.b)
        return _ret(np.where(inside, 1.0 / (self.b - self.a), 0.0), scalar)

    @property
    def mean(self):
        return 0.5 * (self.a + self.b)

    @property
    def second_moment(self):
        return (self.a * self.a + self.a * self.b + self.b * self.b) / 3.0

    @property
    def support(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class Normal(Law1D):
    """Gaussian law; F via the erf-based ``scipy.special.ndtr`` (|err| < 1e-15).

    The partial moment uses the identity K(z) = m F(z) - s phi((z-m)/s) with
    phi the standard normal density.
    """

    m: float = 0.0
    s: float = 1.0

    def __post_init__(self):
        if self.s <= 0.0:
            raise DomainError("Normal requires s > 0")

    def _std(self, z):
        return (z - self.m) / self.s

    def cdf(self, z):
        z, scalar = _as_array(z)
        return _ret(ndtr(self._std(z)), scalar)

    def partial_moment(self, z):
        z, scalar = _as_array(z)
        u = self._std(z)
        phi = np.exp(-0.5 * u * u) / _SQRT2PI
        return _ret(self.m * ndtr(u) - self.s * phi, scalar)

    def quantile(self, u):
        u, scalar = self._check_u(u)
        return _ret(self.m + self.s * ndtri(u), scalar)

    def density(self, z):
        z, scalar = _as_array(z)
        u = self._std(z)
        return _ret(np.exp(-0.5 * u * u) / (_SQRT2PI * self.s), scalar)

    @property
    def mean(self):
        return self.m

    @property
    def second_moment(self):
        return self.m * self.m + self.s * self.s

    @property
    def support(self):
        return (-math.inf, math.inf)

    def integration_bounds(self):
        return (self.m - 14.0 * self.s, self.m + 14.0 * self.s)


@dataclass(frozen=True)
class Exponential(Law1D):
    rate: float

    def __post_init__(self):
        if self.rate <= 0.0:
            raise DomainError("Exponential requires rate > 0")

    def cdf(self, z):
        z, scalar = _as_array(z)
        return _ret(np.where(z > 0.0, -np.expm1(-self.rate * np.maximum(z, 0.0)), 0.0), scalar)

    def partial_moment(self, z):
        z, scalar = _as_array(z)
        zp = np.minimum(np.maximum(z, 0.0), 1e306)
        ez = np.exp(-self.rate * zp)
        val = -np.expm1(-self.rate * zp) / self.rate - zp * ez
        return _ret(np.where(z > 0.0, val, 0.0), scalar)

    def quantile(self, u):
        u, scalar = self._check_u(u)
        return _ret(-np.log1p(-u) / self.rate, scalar)

    def density(self, z):
        z, scalar = _as_array(z)
        return _ret(np.where(z >= 0.0, self.rate * np.exp(-self.rate * np.maximum(z, 0.0)), 0.0), scalar)

    @property
    def mean(self):
        return 1.0 / self.rate

    @property
    def second_moment(self):
        return 2.0 / (self.rate * self.rate)

    @property
    def support(self):
        return (0.0, math.inf)

    def integration_bounds(self):
        return (0.0, 50.0 / self.rate)


@dataclass(frozen=True)
class PowerDensity2x(Law1D):
    """Law with density 2x on [0, 1]; F(z) = z^2, K(z) = 2 z^3 / 3."""

    def cdf(self, z):
        z, scalar = _as_array(z)
        zc = np.clip(z, 0.0, 1.0)
        return _ret(zc * zc, scalar)

    def partial_moment(self, z):
        z, scalar = _as_array(z)
        zc = np.clip(z, 0.0, 1.0)
        return _ret(2.0 * zc ** 3 / 3.0, scalar)

    def quantile(self, u):
        u, scalar = self._check_u(u)
        return _ret(np.sqrt(u), scalar)

    def density(self, z):
        z, scalar = _as_array(z)
        inside = (z >= 0.0) & (z <= 1.0)
        return _ret(np.where(inside, 2.0 * z, 0.0), scalar)

    @property
    def mean(self):
        return 2.0 / 3.0

    @property
    def second_moment(self):
        return 0.5

    @property
    def support(self):
        return (0.0, 1.0)


@dataclass(frozen=True)
class PointMass(Law1D):
    x: float

    def cdf(self, z):
        z, scalar = _as_array(z)
        return _ret((z >= self.x).astype(float), scalar)

    def cdf_left(self, z):
        z, scalar = _as_array(z)
        return _ret((z > self.x).astype(float), scalar)

    def partial_moment(self, z):
        z, scalar = _as_array(z)
        return _ret(np.where(z >= self.x, self.x, 0.0), scalar)

    def quantile(self, u):
        u, scalar = self._check_u(u)
        return _ret(np.full_like(u, self.x), scalar)

    @property
    def mean(self):
        return self.x

    @property
    def second_moment(self):
        return self.x * self.x

    @property
    def support(self):
        return (self.x, self.x)

    def decompose(self):
        return None, self.support, np.array([self.x]), np.array([1.0])


@dataclass(frozen=True)
class FiniteAtoms(Law1D):
    """Finitely supported law; F is the right-continuous step function.

    The quantile is the left-continuous generalized inverse
    ``inf{x : F(x) >= u}``.
    """

    points: np.ndarray
    weights: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)
    _cum_xw: np.ndarray = field(init=False, repr=False)

    def __init__(self, points, weights):
        points = np.asarray(points, dtype=float).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if points.size == 0 or points.size != weights.size:
            raise DomainError("points and weights must be nonempty and aligned")
        order = np.argsort(points, kind="stable")
        points = points[order]
        weights = weights[order]
        if np.any(np.diff(points) <= 0.0):
            raise DomainError("atoms must be pairwise distinct")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be >= 0 and sum to 1 within 1e-12")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_cum", np.cumsum(weights))
        object.__setattr__(self, "_cum_xw", np.cumsum(points * weights))

    def _partial(self, cum, z, side):
        z, scalar = _as_array(z)
        idx = np.searchsorted(self.points, z, side=side)
        padded = np.concatenate(([0.0], cum))
        return _ret(padded[idx], scalar)

    def cdf(self, z):
        return self._partial(self._cum, z, "right")

    def cdf_left(self, z):
        return self._partial(self._cum, z, "left")

    def partial_moment(self, z):
        return self._partial(self._cum_xw, z, "right")

    def quantile(self, u):
        u, scalar = self._check_u(u)
        idx = np.minimum(np.searchsorted(self._cum, u, side="left"), self.points.size - 1)
        return _ret(self.points[idx], scalar)

    @property
    def mean(self):
        return float(self._cum_xw[-1])

    @property
    def second_moment(self):
        return float(np.dot(self.weights, self.points ** 2))

    @property
    def support(self):
        return (float(self.points[0]), float(self.points[-1]))

    def decompose(self):
        return None, self.support, self.points, self.weights


def _is_symmetric_about_zero(law: Law1D) -> bool:
    if isinstance(law, Normal):
        return law.m == 0.0
    if isinstance(law, Uniform):
        return law.a == -law.b
    if isinstance(law, FiniteAtoms):
        pts, w = law.points, law.weights
        rev = np.argsort(-pts)
        return np.allclose(pts, -pts[rev]) and np.allclose(w, w[rev])
    return False


@dataclass(frozen=True)
class TruncatedLaw(Law1D):
    """Law of ``Z 1{Z in [alpha, beta]}`` for ``Z ~ base``: the centered
    truncation keeps an atom at 0 carrying the clipped mass.

    The pair must satisfy ``E Z 1{Z in [alpha, beta]} = 0``, i.e.
    ``K(beta) - K(alpha-) = 0`` within 1e-10.  Use :meth:`centered` to solve
    for ``beta`` given ``alpha``.
    """

    base: Law1D
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha < 0.0 < self.beta):
            raise DomainError("truncation requires alpha < 0 < beta")
        if abs(self.centering_residual) > 1e-10:
            raise DomainError(
                f"truncation not centered: |K(beta)-K(alpha-)| = "
                f"{abs(self.centering_residual):.3e} > 1e-10"
            )

    @property
    def centering_residual(self) -> float:
        return self.base.partial_moment(self.beta) - _partial_moment_left(self.base, self.alpha)

    @classmethod
    def centered(cls, base: Law1D, alpha: float, beta="auto") -> "TruncatedLaw":
        """Build a centered truncation, solving for ``beta`` when ``"auto"``.

        For a symmetric base and ``beta = -alpha`` the pair is accepted
        directly; otherwise ``beta`` solves ``K(beta) = K(alpha-)`` by
        bracketed bisection to 1e-12.
        """
        if alpha >= 0.0:
            raise DomainError("alpha must be negative")
        k_alpha_left = _partial_moment_left(base, alpha)
        if beta != "auto":
            return cls(base, alpha, float(beta))
        if _is_symmetric_about_zero(base):
            return cls(base, alpha, -alpha)
        if k_alpha_left >= 0.0:
            raise DomainError(
                "cannot center truncation: no negative mass kept below alpha to balance"
            )

        def g(b):
            return base.partial_moment(b) - k_alpha_left

        lo, hi = 0.0, 1.0
        while g(hi) < 0.0:
            hi *= 2.0
            if hi > 1e18:
                raise DomainError("cannot center truncation: K(beta) never reaches K(alpha-)")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if g(mid) < 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-12 * max(1.0, hi):
                break
        return cls(base, alpha, 0.5 * (lo + hi))

    def cdf(self, z):
        z, scalar = _as_array(z)
        f = self.base.cdf
        fa = self.base.cdf_left(self.alpha)
        fb = f(self.beta)
        below = np.where(z >= self.alpha, f(np.minimum(z, self.beta)) - fa, 0.0)
        out = np.where(z >= 0.0, below + 1.0 - fb + fa, below)
        return _ret(np.clip(out, 0.0, 1.0), scalar)

    def cdf_left(self, z):
        z, scalar = _as_array(z)
        fl = self.base.cdf_left
        fa = fl(self.alpha)
        fb = self.base.cdf(self.beta)
        below = np.where(z > self.alpha, fl(np.minimum(z, self.beta)) - fa, 0.0)
        # z = beta stays in the continuous branch: F(beta-) excludes only an
        # atom of the base at beta, which truncation keeps.
        inside = np.where(
            z > self.beta, 1.0, np.where(z > 0.0, below + 1.0 - fb + fa, below)
        )
        return _ret(np.clip(inside, 0.0, 1.0), scalar)

    def partial_moment(self, z):
        z, scalar = _as_array(z)
        ka = _partial_moment_left(self.base, self.alpha)
        val = np.where(
            z >= self.alpha,
            self.base.partial_moment(np.clip(z, self.alpha, self.beta)) - ka,
            0.0,
        )
        return _ret(val, scalar)

    def quantile(self, u):
        u, scalar = self._check_u(u)
        fa = self.base.cdf_left(self.alpha)
        fb = self.base.cdf(self.beta)
        atom = 1.0 - fb + fa
        f0 = self.base.cdf_left(0.0) - fa     # mass strictly below the atom at 0
        below = u <= f0
        above = u > f0 + atom
        out = np.zeros_like(u)
        if np.any(below):
            out[below] = self.base.quantile(np.clip(u[below] + fa, 1e-16, 1.0 - 1e-16))
        if np.any(above):
            out[above] = self.base.quantile(np.clip(u[above] - atom + fa, 1e-16, 1.0 - 1e-16))
        return _ret(np.clip(out, self.alpha, self.beta), scalar)

    def sample(self, n, seed, stream=0):
        z = self.base.sample(n, seed, stream)
        return z * ((z >= self.alpha) & (z <= self.beta))

    @property
    def mean(self):
        return 0.0

    @property
    def second_moment(self):
        density, _, atoms, masses = self.decompose()
        total = float(np.dot(masses, atoms ** 2)) if atoms.size else 0.0
        if density is not None:
            total += adaptive_simpson(
                lambda t: t * t * density(t), self.alpha, self.beta, tol=1e-12
            )
        return total

    @property
    def support(self):
        return (self.alpha, self.beta)

    @property
    def clipped_mass(self) -> float:
        """Mass of the atom at 0: P(Z outside [alpha, beta])."""
        return 1.0 - self.base.cdf(self.beta) + self.base.cdf_left(self.alpha)

    def decompose(self):
        density, _, base_atoms, base_masses = self.base.decompose()
        keep = (base_atoms >= self.alpha) & (base_atoms <= self.beta)
        atoms = np.concatenate((base_atoms[keep], [0.0]))
        masses = np.concatenate((base_masses[keep], [self.clipped_mass]))
        if 0.0 in base_atoms[keep]:
            # merge the kept base atom at 0 with the clipped mass
            at_zero = atoms == 0.0
            merged = masses[at_zero].sum()
            atoms = np.concatenate((atoms[~at_zero], [0.0]))
            masses = np.concatenate((masses[~at_zero], [merged]))
        return density, (self.alpha, self.beta), atoms, masses


def _partial_moment_left(law: Law1D, z: float) -> float:
    """K(z-) = K(z) - z * (F(z) - F(z-))."""
    return law.partial_moment(z) - z * (law.cdf(z) - law.cdf_left(z))


@dataclass(frozen=True)
class RadialLaw:
    """Radially symmetric law on R^q: standard Gaussian or a uniform ball.

    ``sample`` returns an ``(n, q)`` array; the covariance is
    ``(E|Z|^2 / q) I_q``.
    """

    q: int
    kind: str = "gaussian"
    radius: float = 1.0

    def __post_init__(self):
        if self.q < 1:
            raise DomainError("dimension must be >= 1")
        if self.kind not in ("gaussian", "uniform_ball"):
            raise DomainError(f"unknown radial kind {self.kind!r}")

    @property
    def second_moment(self) -> float:
        if self.kind == "gaussian":
            return float(self.q)
        return self.radius ** 2 * self.q / (self.q + 2.0)

    def sample(self, n: int, seed: int, stream: int = 0) -> np.ndarray:
        if n < 1:
            raise DomainError("sample size must be >= 1")
        gen = make_generator(seed, stream)
        u = np.maximum(gen.random((n, self.q)), 1e-300)
        g = ndtri(u)
        if self.kind == "gaussian":
            return g
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        radii = self.radius * np.maximum(gen.random((n, 1)), 1e-300) ** (1.0 / self.q)
        return g / norms * radii


_TRIVIAL_KINDS = {
    "uniform01": lambda: Uniform(0.0, 1.0),
    "normal01": lambda: Normal(0.0, 1.0),
    "power2x": lambda: PowerDensity2x(),
}


def law_from_json(obj) -> Law1D:
    """Build a law from its JSON description.

    Examples: ``{"kind": "normal", "mean": 0, "sd": 1}``,
    ``{"kind": "uniform", "a": -1, "b": 1}``, ``{"kind": "exponential",
    "rate": 2}``, ``{"kind": "power2x"}``, ``{"kind": "pointmass", "x": 2}``,
    ``{"kind": "atoms", "points": [...], "weights": [...]}``.  An optional
    ``"truncation": {"alpha": -3, "beta": "auto"}`` block wraps the law in a
    centered truncation.
    """
    if isinstance(obj, str):
        if obj in _TRIVIAL_KINDS:
            return _TRIVIAL_KINDS[obj]()
        raise DomainError(f"unknown law shortcut {obj!r}")
    kind = obj.get("kind")
    if kind == "uniform":
        law = Uniform(float(obj["a"]), float(obj["b"]))
    elif kind == "normal":
        law = Normal(float(obj.get("mean", 0.0)), float(obj.get("sd", 1.0)))
    elif kind == "exponential":
        law = Exponential(float(obj["rate"]))
    elif kind == "power2x":
        law = PowerDensity2x()
    elif kind == "pointmass":
        law = PointMass(float(obj["x"]))
    elif kind == "atoms":
        law = FiniteAtoms(obj["points"], obj["weights"])
    else:
        raise DomainError(f"unknown law kind {kind!r}")
    trunc = obj.get("truncation")
    if trunc is not None:
        law = TruncatedLaw.centered(law, float(trunc["alpha"]), trunc.get("beta", "auto"))
    return law
